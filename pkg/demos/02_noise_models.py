"""Corrupt labels with the two noise models and compare counts to the matrices."""
import numpy as np

from gearnet.data import build_transition_matrix, inject_noise

np.set_printoptions(precision=3, suppress=True)

for kind in ("uniform", "flip"):
    tm = build_transition_matrix(kind, 4, 0.4)
    print(kind, "transition matrix")
    print(tm.q)

    y = np.repeat(np.arange(4), 50_000)  # 50k clean labels per class
    noisy = inject_noise(y, tm, seed=1)
    counts = np.zeros((4, 4))
    np.add.at(counts, (y, noisy), 1)
    print("observed frequencies")
    print(counts / 50_000)
    print("fraction corrupted", np.mean(noisy != y))
    print()
