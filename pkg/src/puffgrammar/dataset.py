"""Accelerometer stream ingestion, windowing, class balancing and splitting."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DataError, ParseError

CLASSES = (1, 2, 3, 4)
NON_SMOKING, HAND_TO_LIP, HAND_ON_LIP, HAND_OFF_LIP = CLASSES
CLASS_NAMES = {1: "Rest", 2: "H-to-L", 3: "H-on-L", 4: "H-off-L"}

# row i is the one-hot code of class i+1
TARGET_CODES = np.eye(4)

SAMPLE_RATE_HZ = 25.0
WINDOW = 20
FEATURE_ORDER = "xyz_interleaved"
META_VERSION = 1
PARTITIONS = ("train", "val", "test")


class Sample(NamedTuple):
    t: float
    ax: float
    ay: float
    az: float
    label: int | None = None


@dataclass
class Stream:
    """One contiguous recording: timestamps, (N, 3) accelerations, optional labels."""

    t: np.ndarray
    xyz: np.ndarray
    labels: np.ndarray | None = None
    stream_id: int = 0

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        if len(self.t) != len(self.xyz):
            raise DataError("timestamp and sample counts differ")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.t):
                raise DataError("label and sample counts differ")
            bad = ~np.isin(self.labels, CLASSES)
            if bad.any():
                raise DataError(f"label {self.labels[bad][0]} at sample {int(np.argmax(bad))} not in {CLASSES}")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            i = int(np.argmin(np.diff(self.t) > 0)) + 1
            raise DataError(f"timestamps not strictly increasing at sample {i}")

    def __len__(self):
        return len(self.t)

    def samples(self):
        for i in range(len(self)):
            label = None if self.labels is None else int(self.labels[i])
            yield Sample(float(self.t[i]), *map(float, self.xyz[i]), label)

    @property
    def sample_rate(self) -> float:
        if len(self.t) < 2:
            return float("nan")
        return float(1.0 / np.median(np.diff(self.t)))


def check_rate(stream: Stream, expected: float = SAMPLE_RATE_HZ, rel_tol: float = 0.01):
    rate = stream.sample_rate
    if not math.isnan(rate) and abs(rate - expected) > rel_tol * expected:
        raise DataError(f"stream {stream.stream_id} sampled at {rate:.3f} Hz, expected {expected:g} Hz "
                        "(resampling is not supported; override the rate check to proceed)")


# --- CSV I/O ---------------------------------------------------------------

def _read_rows(fh, stream_id):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input", line=1) from None
    header = [h.strip() for h in header]
    if header not in (["t", "x", "y", "z"], ["t", "x", "y", "z", "label"]):
        raise ParseError(f"expected header 't,x,y,z[,label]', got {','.join(header)!r}", line=1)
    has_label = len(header) == 5
    t, xyz, labels = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, got {len(row)}", line=lineno)
        try:
            t.append(float(row[0]))
            xyz.append((float(row[1]), float(row[2]), float(row[3])))
            if has_label:
                labels.append(int(row[4]))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if not all(map(math.isfinite, xyz[-1])) or not math.isfinite(t[-1]):
            raise ParseError("non-finite value", line=lineno)
        if has_label and labels[-1] not in CLASSES:
            raise ParseError(f"label {labels[-1]} not in {CLASSES}", line=lineno)
        if len(t) > 1 and t[-1] <= t[-2]:
            raise DataError(f"line {lineno}: timestamp {t[-1]!r} not after {t[-2]!r}")
    return Stream(np.array(t), np.array(xyz).reshape(-1, 3), np.array(labels) if has_label else None, stream_id)


def ingest(sources, check_sample_rate: bool = True, sample_rate: float = SAMPLE_RATE_HZ) -> list[Stream]:
    """Read one or more ``t,x,y,z[,label]`` CSV files into streams.

    ``sources`` may be a path, an open text stream, CSV text, or a list of
    those; each yields one stream, numbered in order.
    """
    if isinstance(sources, (str, os.PathLike, io.IOBase)):
        sources = [sources]
    streams = []
    for sid, src in enumerate(sources):
        if isinstance(src, io.IOBase):
            stream = _read_rows(src, sid)
        elif isinstance(src, str) and "\n" in src:
            stream = _read_rows(io.StringIO(src), sid)
        else:
            with open(src, newline="", encoding="utf-8") as fh:
                stream = _read_rows(fh, sid)
        if check_sample_rate:
            check_rate(stream, sample_rate)
        streams.append(stream)
    return streams


def write_stream_csv(stream: Stream, path, metadata: dict | None = None):
    """Write a stream as CSV; floats use ``repr`` so ingest round-trips exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        labeled = stream.labels is not None
        fh.write("t,x,y,z,label\n" if labeled else "t,x,y,z\n")
        for i in range(len(stream)):
            x, y, z = stream.xyz[i]
            row = f"{float(stream.t[i])!r},{float(x)!r},{float(y)!r},{float(z)!r}"
            if labeled:
                row += f",{int(stream.labels[i])}"
            fh.write(row + "\n")
    if metadata is not None:
        write_metadata(meta_path(path), metadata)


def meta_path(path) -> str:
    return os.fspath(path) + ".meta"


def default_metadata(**overrides) -> dict:
    meta = {
        "format_version": META_VERSION,
        "sample_rate_hz": SAMPLE_RATE_HZ,
        "window": WINDOW,
        "stride": 1,
        "feature_order": FEATURE_ORDER,
        "normalize": "none",
        "leak_mode": "balance_first",
        "seed": 0,
    }
    meta.update(overrides)
    return meta


def write_metadata(path, meta: dict):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in meta.items():
            fh.write(f"{key}={value}\n")


def read_metadata(path) -> dict:
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ParseError(f"expected key=value, got {line!r}", line=lineno)
            meta[key.strip()] = value.strip()
    if int(meta.get("format_version", -1)) != META_VERSION:
        raise ParseError(f"unsupported metadata version {meta.get('format_version')!r}")
    return meta


# --- windowing -------------------------------------------------------------

@dataclass
class WindowSet:
    """Parallel arrays describing windows.

    ``features`` is (M, 60) with interleaved [x1, y1, z1, ..., x20, y20, z20]
    rows. ``source`` indexes the window each row was copied from; it equals
    the row index until :func:`balance` adds duplicates.
    """

    features: np.ndarray
    labels: np.ndarray | None
    stream_ids: np.ndarray
    starts: np.ndarray
    source: np.ndarray = None

    def __post_init__(self):
        if self.source is None:
            self.source = np.arange(len(self.features))

    def __len__(self):
        return len(self.features)

    def take(self, idx) -> WindowSet:
        idx = np.asarray(idx, dtype=np.int64)
        return WindowSet(self.features[idx], None if self.labels is None else self.labels[idx],
                         self.stream_ids[idx], self.starts[idx], self.source[idx])

    def class_counts(self) -> dict[int, int]:
        return {c: int(np.sum(self.labels == c)) for c in CLASSES}

    @staticmethod
    def concat(parts) -> WindowSet:
        parts = list(parts)
        if not parts:
            return empty_windows()
        offset, sources = 0, []
        # keep source indices unique across the concatenation
        for p in parts:
            sources.append(p.source + offset)
            offset += len(p)
        labeled = all(p.labels is not None for p in parts)
        return WindowSet(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]) if labeled else None,
            np.concatenate([p.stream_ids for p in parts]),
            np.concatenate([p.starts for p in parts]),
            np.concatenate(sources),
        )


def empty_windows(window: int = WINDOW) -> WindowSet:
    return WindowSet(np.empty((0, 3 * window)), np.empty(0, dtype=np.int64),
                     np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))


def majority_label(labels) -> int:
    """Most frequent label; ties favor smoking classes, then the lower id."""
    counts = np.bincount(np.asarray(labels), minlength=5)[1:]
    best = counts.max()
    tied = [c for c in CLASSES if counts[c - 1] == best]
    smoking = [c for c in tied if c != NON_SMOKING]
    return min(smoking) if smoking else tied[0]


def _window_labels(labels, window, starts):
    # fast path: a window whose first and last labels agree and has no change
    # inside is single-label; only straddling windows need the vote
    change = np.concatenate([[0], np.cumsum(labels[1:] != labels[:-1])])
    out = labels[starts].copy()
    mixed = change[starts + window - 1] != change[starts]
    for k in np.flatnonzero(mixed):
        out[k] = majority_label(labels[starts[k]:starts[k] + window])
    return out


def extract_windows(stream: Stream, window: int = WINDOW, stride: int = 1,
                    require_labels: bool = True, normalize: str = "none") -> WindowSet:
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    n = len(stream)
    if n < window:
        return empty_windows(window)
    if require_labels and stream.labels is None:
        raise DataError(f"stream {stream.stream_id} has no labels")
    starts = np.arange(0, n - window + 1, stride)
    view = np.lib.stride_tricks.sliding_window_view(stream.xyz, (window, 3))[:, 0]
    features = view[starts].reshape(len(starts), 3 * window).copy()
    if normalize == "minmax":
        features = minmax_scale(features)
    elif normalize != "none":
        raise ValueError(f"unknown normalization {normalize!r}")
    labels = None if stream.labels is None else _window_labels(stream.labels, window, starts)
    return WindowSet(features, labels, np.full(len(starts), stream.stream_id), starts)


def extract_region_windows(stream: Stream, window: int = WINDOW, stride: int = 1,
                           normalize: str = "none") -> WindowSet:
    """Windows cut inside single-label runs only, never across a label change.

    A region exactly ``window`` samples long yields one window; longer ones
    are covered by a rolling window; shorter ones yield nothing.
    """
    if stream.labels is None:
        raise DataError(f"stream {stream.stream_id} has no labels")
    parts = []
    for lo, hi in label_runs(stream.labels):
        if hi - lo < window:
            continue
        sub = Stream(stream.t[lo:hi], stream.xyz[lo:hi], stream.labels[lo:hi], stream.stream_id)
        w = extract_windows(sub, window, stride, normalize=normalize)
        w.starts = w.starts + lo
        parts.append(w)
    if not parts:
        return empty_windows(window)
    ws = WindowSet.concat(parts)
    ws.source = np.arange(len(ws))
    return ws


def label_runs(labels):
    """Half-open (start, stop) index pairs of maximal constant-label runs."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return []
    edges = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    bounds = np.concatenate([[0], edges, [len(labels)]])
    return list(zip(bounds[:-1].tolist(), bounds[1:].tolist()))


def minmax_scale(features):
    lo = features.min(axis=1, keepdims=True)
    span = features.max(axis=1, keepdims=True) - lo
    span[span == 0] = 1.0
    return (features - lo) / span


def window_streams(streams, window: int = WINDOW, stride: int = 1, mode: str = "regions",
                   normalize: str = "none") -> WindowSet:
    if mode == "regions":
        parts = [extract_region_windows(s, window, stride, normalize) for s in streams]
    elif mode == "rolling":
        parts = [extract_windows(s, window, stride, normalize=normalize) for s in streams]
    else:
        raise ValueError(f"unknown windowing mode {mode!r}")
    ws = WindowSet.concat(parts)
    ws.source = np.arange(len(ws))
    return ws


# --- balancing, targets, splitting ------------------------------------------

def balance(windows: WindowSet, factor: int = 30, classes=(HAND_TO_LIP, HAND_OFF_LIP)) -> WindowSet:
    """Repeat every window of the targeted classes ``factor`` times in total.

    Originals keep their order; the copies follow, grouped per original.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    targeted = np.flatnonzero(np.isin(windows.labels, list(classes)))
    copies = np.repeat(targeted, factor - 1)
    return windows.take(np.concatenate([np.arange(len(windows)), copies]))


def encode_targets(labels) -> np.ndarray:
    labels = np.asarray(getattr(labels, "labels", labels))
    bad = ~np.isin(labels, CLASSES)
    if bad.any():
        raise DataError(f"label {labels[bad][0]} not in {CLASSES}")
    return TARGET_CODES[labels - 1]


def partition_sizes(n: int, ratios=(0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios {ratios} do not sum to 1")
    if n < 3:
        raise DataError(f"need at least 3 windows to split, got {n}")
    # rounding first keeps 0.7 * 100 from landing on 69.999...
    n_train = math.floor(round(ratios[0] * n, 9))
    n_val = math.floor(round(ratios[1] * n, 9))
    return n_train, n_val, n - n_train - n_val


def split(n: int, ratios=(0.70, 0.15, 0.15), seed: int = 0) -> np.ndarray:
    """Partition tags (0=train, 1=val, 2=test) for ``n`` items after a seeded shuffle."""
    n_train, n_val, _ = partition_sizes(n, ratios)
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    tags = np.empty(n, dtype=np.int8)
    tags[order[:n_train]] = 0
    tags[order[n_train:n_train + n_val]] = 1
    tags[order[n_train + n_val:]] = 2
    return tags


@dataclass
class Dataset:
    windows: WindowSet
    tags: np.ndarray
    metadata: dict = field(default_factory=dict)

    def partition(self, name: str) -> WindowSet:
        return self.windows.take(np.flatnonzero(self.tags == PARTITIONS.index(name)))

    def arrays(self, name: str):
        part = self.partition(name)
        return part.features, encode_targets(part.labels)

    @property
    def class_counts(self) -> dict[int, int]:
        return self.windows.class_counts()

    def sizes(self) -> tuple[int, int, int]:
        return tuple(int(np.sum(self.tags == i)) for i in range(3))


def build_dataset(windows: WindowSet, seed: int = 0, leak_mode: str = "balance_first", factor: int = 30,
                  classes=(HAND_TO_LIP, HAND_OFF_LIP), ratios=(0.70, 0.15, 0.15),
                  metadata: dict | None = None) -> Dataset:
    """Balance and split.

    ``balance_first`` balances first and then splits, so copies of one window can
    land in different partitions. ``no_leak`` splits the original windows
    and duplicates only inside the training partition.
    """
    if leak_mode == "balance_first":
        balanced = balance(windows, factor, classes)
        tags = split(len(balanced), ratios, seed)
        ds = Dataset(balanced, tags)
    elif leak_mode == "no_leak":
        tags = split(len(windows), ratios, seed)
        train = windows.take(np.flatnonzero(tags == 0))
        train = balance(train, factor, classes)
        rest = windows.take(np.flatnonzero(tags != 0))
        merged = WindowSet(
            np.concatenate([train.features, rest.features]),
            np.concatenate([train.labels, rest.labels]),
            np.concatenate([train.stream_ids, rest.stream_ids]),
            np.concatenate([train.starts, rest.starts]),
            np.concatenate([train.source, rest.source]),
        )
        ds = Dataset(merged, np.concatenate([np.zeros(len(train), np.int8), tags[tags != 0]]))
    else:
        raise ValueError(f"unknown leak mode {leak_mode!r}")
    ds.metadata = dict(metadata or {}, leak_mode=leak_mode, seed=seed, balance_factor=factor)
    return ds
