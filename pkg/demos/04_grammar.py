"""The puff grammar on hand-written token streams.

A puff is hand-to-lip, a hand-on-lip hold of 0.5 to 3 s, then hand-off-lip.
Up to two stray tokens may interrupt the hold.
"""
from puffgrammar import GrammarConfig, Token, group_sessions, parse

NS, H2L, HOL, HOFF = 1, 2, 3, 4


def stream(*runs):
    classes = [c for c, n in runs for _ in range(n)]
    return [Token(c, k) for k, c in enumerate(classes)]


cases = {
    "one-second hold": stream((NS, 5), (H2L, 3), (HOL, 25), (HOFF, 3)),
    "hold too short (0.2 s)": stream((H2L, 3), (HOL, 5), (HOFF, 3)),
    "hold too long (3.5 s)": stream((H2L, 3), (HOL, 88), (HOFF, 3)),
    "two stray tokens in the hold": stream((H2L, 2), (HOL, 15), (NS, 2), (HOL, 15), (HOFF, 2)),
    "three stray tokens break it": stream((H2L, 2), (HOL, 15), (NS, 3), (HOL, 15), (HOFF, 2)),
}
cfg = GrammarConfig()
for name, tokens in cases.items():
    events = parse(tokens, cfg)
    print(f"{name:<30}", [(e.start_sample, e.end_sample, e.hol_duration_s) for e in events])

# puffs less than a minute apart form a session
puffs = []
for offset in (0, 25 * 30, 25 * 70, 25 * 400):
    puffs += parse([Token(t.cls, t.start_sample + offset) for t in cases["one-second hold"]], cfg)
for s in group_sessions(puffs, cfg):
    print(f"session from sample {s.start_sample} to {s.end_sample} with {len(s.puffs)} puffs")
