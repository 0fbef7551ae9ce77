"""Train the [12, 8] feedforward classifier and read its report."""
import numpy as np

from puffgrammar import SynthConfig, TrainConfig, build_dataset, build_model, confusion, generate, report, train
from puffgrammar.dataset import window_streams

res = generate(SynthConfig(seed=0, puffs=30, distractors=15))
ds = build_dataset(window_streams([res.stream]), seed=0)

cfg = TrainConfig(family="mlp", hidden=(12, 8), epochs=200, batch=100, seed=0)
model, trace = train(build_model(cfg), ds, cfg)
print(f"architecture {model.architecture}, {model.size()} parameters")
for epoch in (1, 10, 50, 200):
    _, tl, vl, ta, va = list(trace.rows())[epoch - 1]
    print(f"epoch {epoch:>3}: loss {tl:.4f}  val_loss {vl:.4f}  acc {ta:.3f}  val_acc {va:.3f}")

x, y = ds.arrays("test")
predicted = np.argmax(model.forward(x), axis=1) + 1
rep = report(confusion(predicted, np.argmax(y, axis=1) + 1))
print(f"{'':>13}precision recall   f1  support")
for name, p, r, f, s in rep.rounded():
    print(f"{name:>13}{p:>9.2f}{r:>7.2f}{f:>6.2f}{s:>9}")
