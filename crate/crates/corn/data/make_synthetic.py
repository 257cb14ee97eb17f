"""Regenerates a9a_synthetic.txt: a9a-shaped rows from a planted logistic model."""
import numpy as np

GROUPS = [5, 8, 16, 7, 14, 6, 5, 2, 5, 5, 3, 3, 3, 41]
ROWS = 200

rng = np.random.default_rng(20240901)
weights = rng.normal(0.0, 1.0, sum(GROUPS))
lines = []
for _ in range(ROWS):
    active, start = [], 0
    for size in GROUPS:
        active.append(start + int(rng.integers(size)))
        start += size
    margin = weights[active].sum() - 1.5
    label = "+1" if rng.random() < 1.0 / (1.0 + np.exp(-margin)) else "-1"
    lines.append(label + " " + " ".join(f"{i + 1}:1" for i in active))
with open("a9a_synthetic.txt", "w") as f:
    f.write("\n".join(lines) + "\n")
