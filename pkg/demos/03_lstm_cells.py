"""Single-timestep LSTMs: stacked width-4 cells versus one wide cell.

With a zero initial state the forget gate and the recurrent weights never
touch the output, so their gradients are exactly zero.
"""
import numpy as np

from puffgrammar import SynthConfig, TrainConfig, accuracy, build_dataset, build_model, generate, train
from puffgrammar.dataset import window_streams

res = generate(SynthConfig(seed=0, puffs=30, distractors=15))
ds = build_dataset(window_streams([res.stream]), seed=0)
x_test, y_test = ds.arrays("test")

for mode, units in (("stacked", 3), ("wide", 3)):
    cfg = TrainConfig(family="lstm", units=units, lstm_mode=mode, epochs=200, batch=100, seed=0)
    model, trace = train(build_model(cfg), ds, cfg)
    acc = accuracy(model.forward(x_test), y_test)
    print(f"{model.architecture:<10} {model.size():>4} params  final loss {trace.train_loss[-1]:.4f}  test acc {acc:.3f}")

grads = model.backward(x_test[:16], y_test[:16])
print("recurrent gradient all zero:", not np.any(grads["cell0.wh"]))
n = model.cells[0].width
print("forget-gate gradient all zero:", not np.any(grads["cell0.wx"][:, n:2 * n]))
