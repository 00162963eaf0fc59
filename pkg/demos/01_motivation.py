"""Two skewed 2-D clusters plus two small anomaly blobs.

Fits K-means (k=1, k=2), a two-component GMM and a contrast discriminator
on the normal points only, then ranks every point.  The cluster-shaped
models put the blobs, which sit just off the short ends of the long
clusters, inside their high-density regions; the discriminator does not.

    python demos/01_motivation.py [n_seeds] [points.csv]
"""
import sys

import numpy as np
import pandas as pd

from chad.motivation import SCORERS, SyntheticConfig, format_table, run_motivation

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
cfg = SyntheticConfig()

table, pts, labels, scores = run_motivation(cfg, seed=0, return_scores=True)
print("seed 0, average precision")
print(format_table(table))

if len(sys.argv) > 2:
    out = pd.DataFrame({"x": pts[:, 0], "y": pts[:, 1], "anomaly": labels.astype(int)})
    for name, s in scores.items():
        out[name] = s
    out.to_csv(sys.argv[2], index=False)
    print(f"points and scores written to {sys.argv[2]}")

rows = [run_motivation(cfg, seed=s) for s in range(n_seeds)]
df = pd.DataFrame(rows, columns=list(SCORERS))
print(f"\nover {n_seeds} seeds")
print(df.describe().loc[["mean", "std", "min"]].round(4).to_string())
ordered = (df["Contrast"] > df["K-means k=2"]) & (df["K-means k=2"] > df["GMM k=2"])
print(f"contrast > K-means k=2 > GMM in {int(ordered.sum())}/{n_seeds} seeds")
