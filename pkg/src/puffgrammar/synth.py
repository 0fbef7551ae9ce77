"""Synthetic labeled wrist-accelerometer streams with smoking puffs and distractors.

Units are normalized g. The arm rests with gravity along -y; at the lips
the gravity vector swings toward +y/+z, with a small random rotation per
puff so that no two puffs share the exact same posture. Raising and
lowering follow different arcs (the forearm turns one way on the way up and
the other way on the way down), so the two transitions are not time
reversals of each other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import (HAND_OFF_LIP, HAND_ON_LIP, HAND_TO_LIP, NON_SMOKING, SAMPLE_RATE_HZ, WINDOW,
                      Stream, label_runs)
from .grammar import GrammarConfig, PuffEvent

REST_POSTURE = np.array([0.0, -1.0, 0.0])
LIP_POSTURE = np.array([0.15, 0.55, 0.82])


@dataclass
class SynthConfig:
    seed: int = 0
    sample_rate_hz: float = SAMPLE_RATE_HZ
    puffs: int = 10
    distractors: int = 5
    noise_sigma: float = 0.05
    hol_range: tuple = (0.5, 3.0)
    gesture_s: float = 0.8
    rest_range: tuple = (2.0, 6.0)
    distractor_range: tuple = (3.0, 8.0)
    rest_drift: float = 0.05
    distractor_amplitude: float = 0.25
    hol_jitter: float = 0.02
    tilt_rad: float = 0.3
    arc: float = 0.3

    def __post_init__(self):
        if self.puffs < 0 or self.distractors < 0:
            raise ValueError("puff and distractor counts must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        lo, hi = self.hol_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid hand-on-lip range {self.hol_range}")
        if self.gesture_s <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("durations and rates must be positive")
        if not 0 < self.rest_range[0] <= self.rest_range[1]:
            raise ValueError(f"invalid rest range {self.rest_range}")
        if not 0 < self.distractor_range[0] <= self.distractor_range[1]:
            raise ValueError(f"invalid distractor range {self.distractor_range}")


@dataclass(frozen=True)
class Segment:
    kind: str  # rest, distractor, h2l, hol, hoffl
    label: int
    start: int
    length: int


@dataclass
class SynthResult:
    stream: Stream
    events: list
    plan: list = field(default_factory=list)


KIND_LABELS = {"rest": NON_SMOKING, "distractor": NON_SMOKING, "h2l": HAND_TO_LIP,
               "hol": HAND_ON_LIP, "hoffl": HAND_OFF_LIP}


def _samples(rng, lo, hi, rate):
    return max(1, int(round(rng.uniform(lo, hi) * rate)))


def _hol_samples(rng, cfg):
    # keep count/rate inside the configured range after rounding
    lo = math.ceil(round(cfg.hol_range[0] * cfg.sample_rate_hz, 9))
    hi = math.floor(round(cfg.hol_range[1] * cfg.sample_rate_hz, 9))
    if hi < max(lo, 1):
        raise ValueError(f"hand-on-lip range {cfg.hol_range} holds no whole sample count")
    return int(np.clip(round(rng.uniform(*cfg.hol_range) * cfg.sample_rate_hz), max(lo, 1), hi))


def make_plan(cfg: SynthConfig, rng) -> list[Segment]:
    activities = ["puff"] * cfg.puffs + ["distractor"] * cfg.distractors
    rng.shuffle(activities)
    gesture = max(1, int(round(cfg.gesture_s * cfg.sample_rate_hz)))
    plan, pos = [], 0

    def add(kind, n):
        nonlocal pos
        plan.append(Segment(kind, KIND_LABELS[kind], pos, n))
        pos += n

    add("rest", _samples(rng, *cfg.rest_range, cfg.sample_rate_hz))
    for act in activities:
        if act == "puff":
            add("h2l", gesture)
            add("hol", _hol_samples(rng, cfg))
            add("hoffl", gesture)
        else:
            add("distractor", _samples(rng, *cfg.distractor_range, cfg.sample_rate_hz))
        add("rest", _samples(rng, *cfg.rest_range, cfg.sample_rate_hz))
    return plan


def smoothstep(u):
    return u * u * (3.0 - 2.0 * u)


def _tilt(v, angle):
    # rotation about the y axis mixes x and z
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]])


def _band_noise(rng, n, amplitude, width=7):
    raw = rng.standard_normal(n + width - 1)
    smooth = np.convolve(raw, np.ones(width) / width, mode="valid")
    return amplitude * smooth / (smooth.std() + 1e-12)


def generate(config: SynthConfig | None = None) -> SynthResult:
    """Build a labeled stream and the puffs the grammar should find in it.

    Ground-truth events are expressed the way :func:`grammar.parse` reports
    them on per-sample label tokens: start at the first hand-to-lip sample,
    end at the first hand-off-lip sample.
    """
    cfg = config or SynthConfig()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    plan = make_plan(cfg, rng)
    n = plan[-1].start + plan[-1].length
    rate = cfg.sample_rate_hz
    t = np.arange(n) / rate
    xyz = np.empty((n, 3))
    labels = np.empty(n, dtype=np.int64)

    drift_phase = rng.uniform(0, 2 * np.pi, size=3)
    drift = cfg.rest_drift * np.sin(2 * np.pi * 0.1 * t[:, None] + drift_phase)

    lip = LIP_POSTURE
    for seg in plan:
        sl = slice(seg.start, seg.start + seg.length)
        labels[sl] = seg.label
        u = (np.arange(seg.length) + 0.5) / seg.length
        if seg.kind == "rest":
            xyz[sl] = REST_POSTURE + drift[sl]
        elif seg.kind == "distractor":
            offset = np.array([rng.uniform(-1, 1), rng.uniform(0, 0.4), rng.uniform(-1, 1)]) * cfg.distractor_amplitude
            noise = np.stack([_band_noise(rng, seg.length, cfg.distractor_amplitude) for _ in range(3)], axis=1)
            xyz[sl] = REST_POSTURE + offset + drift[sl] + noise
        elif seg.kind == "h2l":
            lip = _tilt(LIP_POSTURE, rng.uniform(-cfg.tilt_rad, cfg.tilt_rad))
            xyz[sl] = REST_POSTURE + np.outer(smoothstep(u), lip - REST_POSTURE) + drift[sl]
            xyz[sl, 0] += cfg.arc * np.sin(np.pi * u)
        elif seg.kind == "hol":
            phase = rng.uniform(0, 2 * np.pi)
            jitter = cfg.hol_jitter * np.sin(2 * np.pi * 1.0 * np.arange(seg.length) / rate + phase)
            xyz[sl] = lip + jitter[:, None] + drift[sl]
        elif seg.kind == "hoffl":
            xyz[sl] = lip + np.outer(smoothstep(u), REST_POSTURE - lip) + drift[sl]
            xyz[sl, 0] -= cfg.arc * np.sin(np.pi * u)
    if cfg.noise_sigma > 0:
        xyz += rng.normal(0.0, cfg.noise_sigma, size=xyz.shape)

    gcfg = GrammarConfig(sample_rate_hz=rate)
    events = []
    for k, seg in enumerate(plan):
        if seg.kind != "h2l":
            continue
        hol, off = plan[k + 1], plan[k + 2]
        d = gcfg.hol_duration(hol.start, hol.start + hol.length - 1)
        events.append(PuffEvent(seg.start, off.start, d, (seg.start, off.start)))
    return SynthResult(Stream(t, xyz, labels), events, plan)


def expected_region_counts(plan, n_samples: int | None = None, window: int = WINDOW, stride: int = 1) -> dict:
    """Analytic per-class window counts for region windowing of a plan.

    Adjacent segments sharing a label (rest next to a distractor) merge into
    one region, as they do in the labeled stream.
    """
    labels = np.concatenate([np.full(s.length, s.label) for s in plan]) if plan else np.empty(0, int)
    counts = {c: 0 for c in KIND_LABELS.values()}
    for lo, hi in label_runs(labels):
        length = hi - lo
        if length >= window:
            counts[int(labels[lo])] += (length - window) // stride + 1
    return counts
