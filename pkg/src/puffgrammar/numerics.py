"""Dense float64 building blocks: products, activations, losses, Adam.

Matrices are plain 2-D ``numpy.float64`` arrays. Everything here is a pure
function except :func:`adam_step`, which updates parameters and optimizer
state in place.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, TrainingError

BCE_CLAMP = 1e-12

ACTIVATIONS = ("relu", "sigmoid", "tanh")
LOSSES = ("bce", "mse")


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # exp of a non-positive argument never overflows; pick the form by sign
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def activate(kind: str, x):
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(np.asarray(x, dtype=np.float64))
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(kind: str, x, out=None):
    """Derivative of the activation at pre-activation ``x``.

    ``out`` may pass the already computed activation to skip recomputation.
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return (x > 0).astype(np.float64)
    if out is None:
        out = activate(kind, x)
    if kind == "sigmoid":
        return out * (1.0 - out)
    if kind == "tanh":
        return 1.0 - out * out
    raise ValueError(f"unknown activation {kind!r}")


def _check_same(p, t):
    if p.shape != t.shape:
        raise DimensionError(f"prediction shape {p.shape} does not match target shape {t.shape}")


def loss(kind: str, predicted, target) -> float:
    p = as_matrix(predicted)
    t = as_matrix(target)
    _check_same(p, t)
    if kind == "mse":
        return float(np.mean((p - t) ** 2))
    if kind == "bce":
        pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
        return float(np.mean(-(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc))))
    raise ValueError(f"unknown loss {kind!r}")


def loss_grad(kind: str, predicted, target) -> np.ndarray:
    """Gradient of the mean-reduced loss with respect to the predictions."""
    p = as_matrix(predicted)
    t = as_matrix(target)
    _check_same(p, t)
    n = p.size
    if kind == "mse":
        return 2.0 * (p - t) / n
    if kind == "bce":
        pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
        g = (pc - t) / (pc * (1.0 - pc)) / n
        # clamped entries are flat in the clamped loss
        g[(p != pc)] = 0.0
        return g
    raise ValueError(f"unknown loss {kind!r}")


def sigmoid_output_delta(kind: str, predicted, target) -> np.ndarray:
    """Gradient w.r.t. the pre-sigmoid logits for a sigmoid output layer.

    For bce this is the fused ``(p - t) / n`` form, which stays informative
    when the sigmoid saturates; it equals the chain rule wherever the clamp
    is inactive.
    """
    p = as_matrix(predicted)
    t = as_matrix(target)
    _check_same(p, t)
    if kind == "bce":
        return (p - t) / p.size
    return loss_grad(kind, p, t) * p * (1.0 - p)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Gradients are checked before anything is modified, so a rejected step
    leaves both the parameters and the state untouched.
    """
    for name, p in params.items():
        g = grads[name]
        if np.shape(g) != np.shape(p):
            raise DimensionError(f"gradient for {name!r} has shape {np.shape(g)}, parameter has {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter block {name!r}")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params


def sub_seed(seed: int, name: str) -> int:
    """Derive an independent 64-bit seed for a named purpose (init, shuffle, ...)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return int(ss.generate_state(1, np.uint64)[0])


def layer_generators(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(int(seed)).spawn(count)]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))
