"""Smoking detection from wrist accelerometer windows and a mini-gesture grammar."""
__version__ = "0.1.0"

from .dataset import (Dataset, Stream, WindowSet, balance, build_dataset, encode_targets, extract_windows,
                      ingest, split)
from .evaluation import MetricsReport, confusion, report
from .grammar import GrammarConfig, PuffEvent, PuffParser, Session, Token, group_sessions, parse, tokenize
from .models import LstmModel, MlpModel, TrainConfig, TrainTrace, accuracy, build_model, load, save, train
from .synth import SynthConfig, generate

__all__ = [
    "Dataset", "Stream", "WindowSet", "balance", "build_dataset", "encode_targets", "extract_windows", "ingest",
    "split", "MetricsReport", "confusion", "report", "GrammarConfig", "PuffEvent", "PuffParser", "Session", "Token",
    "group_sessions", "parse", "tokenize", "LstmModel", "MlpModel", "TrainConfig", "TrainTrace", "accuracy",
    "build_model", "load", "save", "train", "SynthConfig", "generate",
]
