"""The whole pipeline through the command line, then a replay from a manifest.

Equivalent shell session:

    puffgrammar generate --puffs 30 --distractors 15 --out train.csv
    puffgrammar train --data train.csv --windowing rolling --stride 2 --out detector.model
    puffgrammar generate --puffs 10 --seed 1 --noise 0 --out clean.csv
    puffgrammar detect --model detector.model --data clean.csv --out found.csv
    puffgrammar replay found.csv.manifest
"""
import hashlib
import sys
import tempfile
from pathlib import Path

from puffgrammar.cli import main
from puffgrammar.grammar import match_events, read_events_csv

work = Path(tempfile.mkdtemp(prefix="puffgrammar-"))


def run(*argv):
    code = main([str(a) for a in argv])
    if code:
        sys.exit(f"{argv[0]} failed with exit code {code}")


run("generate", "--puffs", 30, "--distractors", 15, "--out", work / "train.csv")
run("train", "--data", work / "train.csv", "--windowing", "rolling", "--stride", 2, "--out", work / "detector.model")
run("generate", "--puffs", 10, "--seed", 1, "--noise", 0, "--out", work / "clean.csv")
run("detect", "--model", work / "detector.model", "--data", work / "clean.csv", "--out", work / "found.csv")

truth, _ = read_events_csv(work / "clean.events.csv")
found, sessions = read_events_csv(work / "found.csv")
print(f"{len(found)} puffs detected, {len(truth)} in ground truth, "
      f"{len(match_events(found, truth, tolerance=20))} matched within one window; {len(sessions)} session(s)")

before = hashlib.sha256((work / "found.csv").read_bytes()).hexdigest()
run("replay", work / "found.csv.manifest")
after = hashlib.sha256((work / "found.csv").read_bytes()).hexdigest()
print("replay identical:", before == after)
print("artifacts in", work)
