"""From a raw stream to a balanced, split training set.

A synthetic wrist stream is cut into 20-sample windows inside single-label
runs. Hand-to-lip and hand-off-lip windows are rare, so they are duplicated
30 times before a 70/15/15 hold-out split.
"""
from puffgrammar import SynthConfig, build_dataset, generate
from puffgrammar.dataset import CLASS_NAMES, window_streams

res = generate(SynthConfig(seed=0, puffs=20, distractors=10))
print(f"stream: {len(res.stream)} samples ({len(res.stream) / 25:.0f} s), {len(res.events)} puffs")

windows = window_streams([res.stream])
print("windows per class before balancing:")
for c, n in windows.class_counts().items():
    print(f"  {CLASS_NAMES[c]:<14}{n:>6}")

ds = build_dataset(windows, seed=0, leak_mode="balance_first")
print("after x30 duplication:", ds.class_counts)
print("train / val / test:", ds.sizes())

# duplicating before splitting lets copies of one gesture land in train and test;
# no_leak keeps every copy in train and holds out originals only
strict = build_dataset(windows, seed=0, leak_mode="no_leak")
print("no_leak train / val / test:", strict.sizes())
