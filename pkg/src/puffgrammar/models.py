"""Feedforward and single-timestep LSTM classifiers trained with Adam."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .dataset import FEATURE_ORDER, SAMPLE_RATE_HZ
from .errors import (ChecksumError, DimensionError, FamilyMismatchError, ModelFileError,
                     TrainingError, TruncatedFileError, VersionError)

N_FEATURES = 60
N_CLASSES = 4
FORMAT_VERSION = 1

# hidden widths for each hidden-layer count; the 2-layer case is the 12/8 net
WIDTH_SCHEDULES = {1: (12,), 2: (12, 8), 3: (12, 10, 8), 4: (12, 10, 8, 6)}



def _check_width(x, width=N_FEATURES):
    x = nx.as_matrix(x)
    if x.shape[1] != width:
        raise DimensionError(f"expected {width} features per row, got {x.shape[1]}")
    return x


@dataclass
class MlpModel:
    """Dense network: relu hidden layers, sigmoid output.

    ``weights[k]`` has shape (fan_in, fan_out) and maps layer k to k+1.
    """

    sizes: tuple
    weights: list
    biases: list
    loss: str = "bce"
    seed: int = 0
    meta: dict = field(default_factory=dict)

    family = "mlp"

    @classmethod
    def init(cls, hidden=(12, 8), seed: int = 0, loss: str = "bce", n_in=N_FEATURES, n_out=N_CLASSES):
        sizes = (n_in, *hidden, n_out)
        rngs = nx.layer_generators(seed, len(sizes) - 1)
        weights = [nx.glorot_uniform(rngs[k], sizes[k], sizes[k + 1]) for k in range(len(sizes) - 1)]
        biases = [np.zeros(s) for s in sizes[1:]]
        return cls(sizes, weights, biases, loss, seed)

    @property
    def hidden(self):
        return tuple(self.sizes[1:-1])

    @property
    def architecture(self) -> str:
        return ",".join(map(str, self.sizes))

    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> dict:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{k}"] = w
            out[f"b{k}"] = b
        return out

    def forward(self, x, cache=False):
        x = _check_width(x, self.sizes[0])
        acts, pre = [x], []
        a = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = nx.sigmoid(z) if k == last else nx.relu(z)
            pre.append(z)
            acts.append(a)
        return (a, (acts, pre)) if cache else a

    def backward(self, x, targets):
        p, (acts, pre) = self.forward(x, cache=True)
        delta = nx.sigmoid_output_delta(self.loss, p, targets)
        grads = {}
        for k in range(len(self.weights) - 1, -1, -1):
            grads[f"W{k}"] = acts[k].T @ delta
            grads[f"b{k}"] = delta.sum(axis=0)
            if k:
                delta = (delta @ self.weights[k].T) * (pre[k - 1] > 0)
        return {name: grads[name] for name in self.params()}


@dataclass
class LstmCell:
    """Gate parameters laid out as four blocks [input | forget | output | candidate]."""

    wx: np.ndarray  # (n_in, 4h)
    wh: np.ndarray  # (h, 4h)
    b: np.ndarray  # (4h,)

    @property
    def width(self):
        return self.wh.shape[0]

    def step(self, x, h0, c0):
        n = self.width
        z = x @ self.wx + h0 @ self.wh + self.b
        gates = nx.sigmoid(z[:, :3 * n])
        i, f, o = gates[:, :n], gates[:, n:2 * n], gates[:, 2 * n:]
        g = np.tanh(z[:, 3 * n:])
        c = f * c0 + i * g
        tc = np.tanh(c)
        h = o * tc
        return h, c, (x, h0, c0, i, f, o, g, tc)

    def step_backward(self, dh, dc, cache):
        x, h0, c0, i, f, o, g, tc = cache
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c0 * f * (1.0 - f),
            do * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ], axis=1)
        grads = {"wx": x.T @ dz, "wh": h0.T @ dz, "b": dz.sum(axis=0)}
        return dz @ self.wx.T, grads


@dataclass
class LstmModel:
    """One-timestep LSTM stack with zero initial state and a sigmoid output.

    ``mode="stacked"`` chains ``units`` cells of width 4 and squashes the
    last hidden state directly. ``mode="wide"`` uses one cell of width
    ``units`` followed by a dense 4-way readout.
    """

    cells: list
    readout: tuple | None = None
    mode: str = "stacked"
    loss: str = "mse"
    seed: int = 0
    meta: dict = field(default_factory=dict)

    family = "lstm"

    @classmethod
    def init(cls, units: int = 3, seed: int = 0, loss: str = "mse", mode: str = "stacked",
             n_in=N_FEATURES, n_out=N_CLASSES):
        if mode == "stacked":
            if not 1 <= units <= 4:
                raise ValueError("stacked LSTM supports 1 to 4 cells")
            widths = [n_out] * units
        elif mode == "wide":
            widths = [units]
        else:
            raise ValueError(f"unknown LSTM mode {mode!r}")
        rngs = nx.layer_generators(seed, len(widths) + 1)
        cells, fan_in = [], n_in
        for k, h in enumerate(widths):
            wx = nx.glorot_uniform(rngs[k], fan_in, 4 * h)
            wh = nx.glorot_uniform(rngs[k], h, 4 * h)
            cells.append(LstmCell(wx, wh, np.zeros(4 * h)))
            fan_in = h
        readout = None
        if mode == "wide":
            readout = (nx.glorot_uniform(rngs[-1], units, n_out), np.zeros(n_out))
        return cls(cells, readout, mode, loss, seed)

    @property
    def units(self) -> int:
        return len(self.cells) if self.mode == "stacked" else self.cells[0].width

    @property
    def architecture(self) -> str:
        return f"{self.mode}:{self.units}"

    def size(self) -> int:
        return sum(p.size for p in self.params().values())

    def params(self) -> dict:
        out = {}
        for k, cell in enumerate(self.cells):
            out[f"cell{k}.wx"] = cell.wx
            out[f"cell{k}.wh"] = cell.wh
            out[f"cell{k}.b"] = cell.b
        if self.readout is not None:
            out["readout.w"], out["readout.b"] = self.readout
        return out

    def forward(self, x, cache=False):
        x = _check_width(x, self.cells[0].wx.shape[0])
        caches = []
        h = x
        for cell in self.cells:
            zero = np.zeros((len(x), cell.width))
            h, _, c = cell.step(h, zero, zero)
            caches.append(c)
        last_h = h
        if self.readout is not None:
            h = h @ self.readout[0] + self.readout[1]
        p = nx.sigmoid(h)
        return (p, (caches, last_h)) if cache else p

    def backward(self, x, targets):
        p, (caches, last_h) = self.forward(x, cache=True)
        delta = nx.sigmoid_output_delta(self.loss, p, targets)
        grads = {}
        if self.readout is not None:
            grads["readout.w"] = last_h.T @ delta
            grads["readout.b"] = delta.sum(axis=0)
            delta = delta @ self.readout[0].T
        dh = delta
        for k in range(len(self.cells) - 1, -1, -1):
            dh, g = self.cells[k].step_backward(dh, np.zeros_like(dh), caches[k])
            for name, value in g.items():
                grads[f"cell{k}.{name}"] = value
        return {name: grads[name] for name in self.params()}


def forward(model, x):
    return model.forward(x)


def backward(model, x, targets):
    return model.backward(x, nx.as_matrix(targets))


def accuracy(predictions, targets, mode: str = "argmax") -> float:
    p = nx.as_matrix(predictions)
    t = nx.as_matrix(targets)
    if p.shape != t.shape:
        raise DimensionError(f"prediction shape {p.shape} does not match target shape {t.shape}")
    if len(p) == 0:
        return float("nan")
    if mode == "argmax":
        # np.argmax returns the first maximum, which is the tie rule we want
        return float(np.mean(np.argmax(p, axis=1) == np.argmax(t, axis=1)))
    if mode == "elementwise":
        return float(np.mean((p >= 0.5) == (t >= 0.5)))
    raise ValueError(f"unknown accuracy mode {mode!r}")


# --- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    family: str = "mlp"
    epochs: int = 200
    batch: int = 100
    hidden: tuple = (12, 8)
    units: int = 3
    lstm_mode: str = "stacked"
    loss: str | None = None
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.family not in ("mlp", "lstm"):
            raise ValueError(f"unknown model family {self.family!r}")
        if self.loss is None:
            self.loss = "bce" if self.family == "mlp" else "mse"
        if self.loss not in nx.LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        self.hidden = tuple(int(h) for h in self.hidden)


def build_model(config: TrainConfig):
    init_seed = nx.sub_seed(config.seed, "init")
    if config.family == "mlp":
        model = MlpModel.init(config.hidden, init_seed, config.loss)
    else:
        model = LstmModel.init(config.units, init_seed, config.loss, config.lstm_mode)
    model.seed = config.seed
    return model


@dataclass
class TrainTrace:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def append(self, train_loss, val_loss, train_acc, val_acc):
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        self.train_acc.append(train_acc)
        self.val_acc.append(val_acc)

    def rows(self):
        for k in range(len(self)):
            yield k + 1, self.train_loss[k], self.val_loss[k], self.train_acc[k], self.val_acc[k]


def fit(model, x_train, y_train, x_val, y_val, config: TrainConfig):
    """Mini-batch Adam over ``config.epochs`` epochs; the last short batch is kept.

    Losses and accuracies are recorded on the full train and validation sets
    after each epoch.
    """
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("train and validation partitions must be non-empty")
    state = nx.AdamState(config.lr, config.beta1, config.beta2, config.epsilon)
    rng = np.random.Generator(np.random.PCG64(nx.sub_seed(config.seed, "shuffle")))
    params = model.params()
    trace = TrainTrace()
    n = len(x_train)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        for b, lo in enumerate(range(0, n, config.batch)):
            idx = order[lo:lo + config.batch]
            try:
                grads = model.backward(x_train[idx], y_train[idx])
                nx.adam_step(state, params, grads)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from None
        p_train = model.forward(x_train)
        p_val = model.forward(x_val)
        tl = nx.loss(model.loss, p_train, y_train)
        vl = nx.loss(model.loss, p_val, y_val)
        if not (math.isfinite(tl) and math.isfinite(vl)):
            raise TrainingError(f"epoch {epoch}: non-finite loss (train {tl}, val {vl})")
        trace.append(tl, vl, accuracy(p_train, y_train), accuracy(p_val, y_val))
    return model, trace


def train(model, dataset, config: TrainConfig):
    x_train, y_train = dataset.arrays("train")
    x_val, y_val = dataset.arrays("val")
    return fit(model, x_train, y_train, x_val, y_val, config)


def write_trace_csv(trace: TrainTrace, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss,train_acc,val_acc\n")
        for epoch, tl, vl, ta, va in trace.rows():
            fh.write(f"{epoch},{tl!r},{vl!r},{ta!r},{va!r}\n")


def read_trace_csv(path) -> TrainTrace:
    trace = TrainTrace()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            trace.append(float(row["train_loss"]), float(row["val_loss"]),
                         float(row["train_acc"]), float(row["val_acc"]))
    return trace


# --- serialization -------------------------------------------------------------

def _header(model) -> dict:
    head = {
        "format_version": FORMAT_VERSION,
        "family": model.family,
        "architecture": model.architecture,
        "loss": model.loss,
        "seed": model.seed,
        "feature_order": FEATURE_ORDER,
        "normalize": "none",
        "sample_rate_hz": SAMPLE_RATE_HZ,
    }
    # data provenance (split seed, windowing, ...) rides along in meta
    head.update(model.meta)
    return head


def dumps(model) -> str:
    lines = ["# puffgrammar model"]
    for key, value in _header(model).items():
        lines.append(f"{key}={value}")
    for name, p in model.params().items():
        if not np.all(np.isfinite(p)):
            raise ModelFileError(f"parameter {name!r} is not finite")
        mat = np.atleast_2d(p) if p.ndim == 2 else p.reshape(1, -1)
        lines.append(f"param {name} {p.ndim} {' '.join(map(str, p.shape))}")
        for row in mat:
            lines.append(" ".join(repr(float(v)) for v in row))
    lines.append("end")
    body = "\n".join(lines) + "\n"
    return body + f"sha256={hashlib.sha256(body.encode()).hexdigest()}\n"


def save(model, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps(model))


def loads(text: str, family: str | None = None):
    if not text.endswith("\n"):
        raise TruncatedFileError("model file truncated (no trailing checksum line)")
    body, _, last = text[:-1].rpartition("\n")
    if not last.startswith("sha256="):
        raise TruncatedFileError("model file truncated (no trailing checksum line)")
    body += "\n"
    if hashlib.sha256(body.encode()).hexdigest() != last[len("sha256="):]:
        raise ChecksumError("model file checksum mismatch")

    lines = body.splitlines()
    head, k = {}, 0
    while k < len(lines) and not lines[k].startswith("param ") and lines[k] != "end":
        line = lines[k]
        k += 1
        if line.startswith("#") or not line:
            continue
        key, _, value = line.partition("=")
        head[key] = value
    if head.get("format_version") != str(FORMAT_VERSION):
        raise VersionError(f"unsupported model format version {head.get('format_version')!r}")
    if family is not None and head.get("family") != family:
        raise FamilyMismatchError(f"expected a {family} model, file holds {head.get('family')!r}")

    arrays = {}
    while k < len(lines) and lines[k] != "end":
        _, name, ndim, *shape = lines[k].split()
        shape = tuple(int(s) for s in shape)
        rows = shape[0] if int(ndim) == 2 else 1
        block = lines[k + 1:k + 1 + rows]
        if len(block) < rows:
            raise TruncatedFileError(f"parameter block {name!r} is incomplete")
        values = np.array([[float(v) for v in row.split()] for row in block])
        arrays[name] = values.reshape(shape)
        k += 1 + rows
    if k >= len(lines):
        raise TruncatedFileError("missing end marker")
    return _from_parts(head, arrays)


_CORE_KEYS = {"format_version", "family", "architecture", "loss", "seed"}


def _from_parts(head, arrays):
    meta = {k: v for k, v in head.items() if k not in _CORE_KEYS}
    seed = int(head["seed"])
    if head["family"] == "mlp":
        sizes = tuple(int(s) for s in head["architecture"].split(","))
        n = len(sizes) - 1
        model = MlpModel(sizes, [arrays[f"W{k}"] for k in range(n)], [arrays[f"b{k}"] for k in range(n)],
                         head["loss"], seed)
    elif head["family"] == "lstm":
        mode, _ = head["architecture"].split(":")
        n_cells = sum(1 for name in arrays if name.endswith(".wx"))
        cells = [LstmCell(arrays[f"cell{k}.wx"], arrays[f"cell{k}.wh"], arrays[f"cell{k}.b"])
                 for k in range(n_cells)]
        readout = (arrays["readout.w"], arrays["readout.b"]) if "readout.w" in arrays else None
        model = LstmModel(cells, readout, mode, head["loss"], seed)
    else:
        raise ModelFileError(f"unknown model family {head['family']!r}")
    model.meta = meta
    return model


def load(path, family: str | None = None):
    with open(path, encoding="utf-8", newline="") as fh:
        return loads(fh.read(), family)


def checksum(model) -> str:
    return dumps(model).rsplit("sha256=", 1)[1].strip()
