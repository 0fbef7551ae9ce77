"""Rebuild the two-decimal reference reports from their confusion matrices."""
import numpy as np

from puffgrammar import report

matrices = {
    "feedforward": [[1125, 5, 9, 3], [14, 1021, 11, 0], [59, 7, 930, 9], [25, 10, 0, 1018]],
    "LSTM": [[1090, 7, 33, 12], [17, 1017, 12, 0], [43, 23, 929, 10], [10, 25, 24, 994]],
}
for name, cm in matrices.items():
    print(name)
    for row, p, r, f, s in report(np.array(cm)).rounded():
        print(f"  {row:>13} {p:.2f} {r:.2f} {f:.2f} {s}")
