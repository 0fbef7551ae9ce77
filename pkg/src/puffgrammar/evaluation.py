"""Confusion matrices and classification reports in a fixed two-decimal table layout."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .dataset import CLASSES
from .errors import DataError
from .models import read_trace_csv, write_trace_csv

AVERAGES = ("micro avg", "macro avg", "weighted avg")


def confusion(predicted, actual) -> np.ndarray:
    """4x4 counts, rows = actual class, columns = predicted class (ids 1..4)."""
    predicted = np.asarray(predicted, dtype=np.int64)
    actual = np.asarray(actual, dtype=np.int64)
    if predicted.shape != actual.shape:
        raise DataError(f"{len(predicted)} predictions for {len(actual)} labels")
    for arr in (predicted, actual):
        if not np.all(np.isin(arr, CLASSES)):
            raise DataError(f"class ids must be in {CLASSES}")
    cm = np.zeros((4, 4), dtype=np.int64)
    np.add.at(cm, (actual - 1, predicted - 1), 1)
    return cm


@dataclass
class MetricsReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    averages: dict  # name -> (precision, recall, f1)
    accuracy: float

    @property
    def n(self) -> int:
        return int(self.support.sum())

    def rows(self):
        for c in range(len(self.support)):
            yield str(c), self.precision[c], self.recall[c], self.f1[c], int(self.support[c])
        for name in AVERAGES:
            yield (name, *self.averages[name], self.n)

    def rounded(self, decimals: int = 2):
        return [(name, round_half_up(p, decimals), round_half_up(r, decimals), round_half_up(f, decimals), s)
                for name, p, r, f, s in self.rows()]


def _safe_div(num, den, what):
    out = np.zeros(len(num))
    ok = den > 0
    if not ok.all():
        warnings.warn(f"{what} undefined for classes {list(np.flatnonzero(~ok))}; reported as 0",
                      RuntimeWarning, stacklevel=3)
    out[ok] = num[ok] / den[ok]
    return out


def report(cm) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    n = int(cm.sum())
    if n == 0:
        raise DataError("cannot report on an empty confusion matrix")
    tp = np.diag(cm).astype(np.float64)
    precision = _safe_div(tp, cm.sum(axis=0), "precision")
    recall = _safe_div(tp, cm.sum(axis=1), "recall")
    denom = precision + recall
    f1 = np.zeros_like(denom)
    f1[denom > 0] = 2 * precision[denom > 0] * recall[denom > 0] / denom[denom > 0]
    support = cm.sum(axis=1)
    micro = tp.sum() / n
    w = support / n
    averages = {
        "micro avg": (micro, micro, micro),
        "macro avg": (precision.mean(), recall.mean(), f1.mean()),
        "weighted avg": ((precision * w).sum(), (recall * w).sum(), (f1 * w).sum()),
    }
    return MetricsReport(precision, recall, f1, support, averages, micro)


def round_half_up(x: float, decimals: int = 2) -> float:
    # via the shortest repr, so 0.925 rounds to 0.93 as written
    q = Decimal(1).scaleb(-decimals)
    return float(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


def write_report_csv(rep: MetricsReport, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("class,precision,recall,f1,support\n")
        for name, p, r, f, s in rep.rows():
            fh.write(f"{name},{float(p)!r},{float(r)!r},{float(f)!r},{s}\n")


def read_report_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{"class": row["class"], "precision": float(row["precision"]), "recall": float(row["recall"]),
                 "f1": float(row["f1"]), "support": int(row["support"])} for row in csv.DictReader(fh)]


def export_curves(trace, path):
    """Per-epoch loss/accuracy CSV (``epoch,train_loss,val_loss,train_acc,val_acc``)."""
    if len(trace) == 0:
        raise ValueError("trace is empty")
    try:
        write_trace_csv(trace, path)
    except OSError as exc:
        raise OSError(f"cannot write curves to {path}: {exc}") from exc


def read_curves(path):
    return read_trace_csv(path)
