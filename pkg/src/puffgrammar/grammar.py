"""Smoking grammar: turn a stream of mini-gesture tokens into puffs and sessions.

A puff is a run of hand-to-lip tokens, immediately followed by a
hand-on-lip token, then any mix of hand-on-lip tokens and "noise" tokens
(rest or hand-to-lip; at most ``noise_tolerance`` noise tokens in a row),
closed by the first hand-off-lip token. The hand-on-lip duration, measured
from the first to the last hand-on-lip token start plus one stride, must
lie within ``[min_hol_s, max_hol_s]``.

When candidate puffs overlap the leftmost one wins, which also makes it the
longest: every candidate closes on the same hand-off-lip token.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import HAND_OFF_LIP, HAND_ON_LIP, HAND_TO_LIP, SAMPLE_RATE_HZ
from .errors import DataError


@dataclass(frozen=True)
class Token:
    cls: int
    start_sample: int
    confidence: float = 1.0


@dataclass(frozen=True)
class PuffEvent:
    start_sample: int
    end_sample: int
    hol_duration_s: float
    token_span: tuple


@dataclass
class Session:
    puffs: list

    @property
    def start_sample(self):
        return self.puffs[0].start_sample

    @property
    def end_sample(self):
        return self.puffs[-1].end_sample


@dataclass
class GrammarConfig:
    sample_rate_hz: float = SAMPLE_RATE_HZ
    min_hol_s: float = 0.5
    max_hol_s: float = 3.0
    noise_tolerance: int = 2
    stride: int = 1
    min_puffs: int = 2
    max_gap_s: float = 60.0
    inclusive: bool = True

    def __post_init__(self):
        if not self.min_hol_s < self.max_hol_s:
            raise ValueError(f"min_hol_s ({self.min_hol_s}) must be below max_hol_s ({self.max_hol_s})")
        if min(self.noise_tolerance, self.stride, self.min_puffs) < 0 or self.max_gap_s < 0:
            raise ValueError("counts and gaps must be non-negative")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    def hol_duration(self, first_start, last_start) -> float:
        return ((last_start - first_start) + self.stride) / self.sample_rate_hz

    def too_long(self, d) -> bool:
        return d > self.max_hol_s if self.inclusive else d >= self.max_hol_s

    def long_enough(self, d) -> bool:
        return d >= self.min_hol_s if self.inclusive else d > self.min_hol_s


IDLE, ARMED, IN_PUFF = "idle", "armed", "in_puff"


@dataclass
class _Anchor:
    first_token: int  # index of the first hand-to-lip token
    first_sample: int  # start sample of that token
    hol_start: int  # start sample of the first hand-on-lip token


class PuffParser:
    """Streaming automaton; :meth:`feed` returns the puffs closed by a token.

    Several candidate anchors may be open at once (a hand-to-lip token seen
    as noise inside one puff can start another). Anchors whose hand-on-lip
    run already exceeds the upper bound are dropped as soon as that happens,
    since the run can only grow.
    """

    def __init__(self, config: GrammarConfig | None = None):
        self.config = config or GrammarConfig()
        self.state = IDLE
        self.index = -1
        self.last_start = None
        self._h2l_run = None  # (first token index, first sample) of the current H2L run
        self._anchors: list[_Anchor] = []
        self._last_hol = None
        self._noise_run = 0

    def _reset(self):
        self.state = IDLE
        self._h2l_run = None
        self._anchors = []
        self._last_hol = None
        self._noise_run = 0

    def feed(self, token: Token) -> list[PuffEvent]:
        cfg = self.config
        if self.last_start is not None and token.start_sample <= self.last_start:
            raise DataError(f"token start {token.start_sample} not after {self.last_start}")
        self.last_start = token.start_sample
        self.index += 1
        k, cls, s = self.index, token.cls, token.start_sample

        if cls == HAND_OFF_LIP:
            out = []
            if self.state == IN_PUFF and self._anchors:
                a = self._anchors[0]
                d = cfg.hol_duration(a.hol_start, self._last_hol)
                if cfg.long_enough(d):
                    out.append(PuffEvent(a.first_sample, s, d, (a.first_token, k)))
            self._reset()
            return out

        if cls == HAND_ON_LIP:
            if self._h2l_run is not None:
                self._anchors.append(_Anchor(*self._h2l_run, s))
            if self.state == IN_PUFF or self._h2l_run is not None:
                self.state = IN_PUFF
                self._last_hol = s
                self._noise_run = 0
                self._anchors = [a for a in self._anchors if not cfg.too_long(cfg.hol_duration(a.hol_start, s))]
                if not self._anchors:
                    self._reset()
            self._h2l_run = None
            return []

        # rest or hand-to-lip: noise inside a puff, otherwise arming/disarming
        if cls == HAND_TO_LIP:
            if self._h2l_run is None:
                self._h2l_run = (k, s)
        else:
            self._h2l_run = None
        if self.state == IN_PUFF:
            self._noise_run += 1
            if self._noise_run > cfg.noise_tolerance:
                # the hand-to-lip run in progress may still open the next puff
                run = self._h2l_run
                self._reset()
                self._h2l_run = run
        if self.state != IN_PUFF:
            self.state = ARMED if self._h2l_run is not None else IDLE
        return []

    def feed_all(self, tokens) -> list[PuffEvent]:
        out = []
        for tok in tokens:
            out.extend(self.feed(tok))
        return out


def parse(tokens, config: GrammarConfig | None = None) -> list[PuffEvent]:
    return PuffParser(config).feed_all(tokens)


def group_sessions(puffs, config: GrammarConfig | None = None) -> list[Session]:
    """Greedy grouping: a session continues while the gap to the next puff is <= max_gap_s."""
    cfg = config or GrammarConfig()
    groups, current = [], []
    for puff in puffs:
        if current and (puff.start_sample - current[-1].end_sample) / cfg.sample_rate_hz > cfg.max_gap_s:
            groups.append(current)
            current = []
        current.append(puff)
    if current:
        groups.append(current)
    return [Session(g) for g in groups if len(g) >= cfg.min_puffs]


def tokenize(predictions, starts) -> list[Token]:
    p = np.asarray(predictions, dtype=np.float64)
    cls = np.argmax(p, axis=1) + 1
    conf = p[np.arange(len(p)), cls - 1]
    return [Token(int(c), int(s), float(q)) for c, s, q in zip(cls, starts, conf)]


def label_tokens(labels, stride: int = 1) -> list[Token]:
    """One token per sample (or every ``stride`` samples) from ground-truth labels."""
    labels = np.asarray(labels)
    return [Token(int(labels[i]), i) for i in range(0, len(labels), stride)]


EVENT_HEADER = "kind,start_sample,end_sample,hol_duration_s,session_id"


def write_events_csv(puffs, sessions, path):
    session_of = {}
    for sid, session in enumerate(sessions):
        for puff in session.puffs:
            session_of[id(puff)] = sid
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(EVENT_HEADER + "\n")
        for puff in puffs:
            sid = session_of.get(id(puff), "")
            fh.write(f"puff,{puff.start_sample},{puff.end_sample},{puff.hol_duration_s!r},{sid}\n")
        for sid, session in enumerate(sessions):
            fh.write(f"session,{session.start_sample},{session.end_sample},,{sid}\n")


def read_events_csv(path):
    """Return (puff rows, session rows) as lists of dicts with typed values."""
    puffs, sessions = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rec = {
                "start_sample": int(row["start_sample"]),
                "end_sample": int(row["end_sample"]),
                "hol_duration_s": float(row["hol_duration_s"]) if row["hol_duration_s"] else None,
                "session_id": int(row["session_id"]) if row["session_id"] else None,
            }
            (puffs if row["kind"] == "puff" else sessions).append(rec)
    return puffs, sessions


def _span(event):
    if isinstance(event, dict):
        return event["start_sample"], event["end_sample"]
    return event.start_sample, event.end_sample


def match_events(detected, truth, tolerance: int) -> list[tuple[int, int]]:
    """Pair detected and true puffs whose start and end samples agree within ``tolerance``.

    Events may be PuffEvents or rows from :func:`read_events_csv`. Each event
    is used at most once; pairs are formed greedily in order.
    """
    pairs, used = [], set()
    for i, t in enumerate(truth):
        ts, te = _span(t)
        for j, d in enumerate(detected):
            ds, de = _span(d)
            if j not in used and abs(ds - ts) <= tolerance and abs(de - te) <= tolerance:
                pairs.append((i, j))
                used.add(j)
                break
    return pairs
