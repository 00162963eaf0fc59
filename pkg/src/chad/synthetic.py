"""Synthetic heterogeneous tables with planted anomalies, for tests and demos.

Normal records come from a handful of latent profiles; each profile favours
a few entities per categorical field and has its own continuous centroid.
Anomalies recombine fields across profiles, so every value is individually
plausible but the combination is not.
"""
from __future__ import annotations

import numpy as np
import pandas as pd

from .data import SchemaDecl


def mixed_table(n_normal: int = 2000, n_anomaly: int = 400, arities=(12, 6, 4, 3),
                r: int = 6, n_profiles: int = 4, seed: int = 0,
                off_profile: float = 0.5) -> tuple[pd.DataFrame, SchemaDecl]:
    """Labelled table; ``off_profile`` is the share of anomalies whose continuous
    block is also pushed away from every profile centroid on a few fields."""
    rng = np.random.default_rng(seed)
    k = len(arities)
    prefs = [[rng.choice(a, size=min(2, a), replace=False) for a in arities] for _ in range(n_profiles)]
    centers = rng.uniform(0.15, 0.85, size=(n_profiles, r))

    def draw(profile_per_field: np.ndarray, cont_profile: np.ndarray) -> dict:
        m = profile_per_field.shape[0]
        cols = {}
        for j, a in enumerate(arities):
            p = profile_per_field[:, j]
            pick = rng.integers(0, len(prefs[0][j]), size=m)
            vals = np.array([prefs[pp][j][q] for pp, q in zip(p, pick)])
            cols[f"cat{j}"] = [f"e{v}" for v in vals]
        cont = centers[cont_profile] + rng.normal(0, 0.05, size=(m, r))
        for j in range(r):
            cols[f"num{j}"] = cont[:, j] * 100.0
        return cols

    prof = rng.integers(0, n_profiles, size=n_normal)
    normal = pd.DataFrame(draw(np.repeat(prof[:, None], k, axis=1), prof))
    normal["label"] = "normal"

    base = rng.integers(0, n_profiles, size=n_anomaly)
    mixed = np.repeat(base[:, None], k, axis=1)
    # move about half the categorical fields, and sometimes the continuous block, to other profiles
    flip = rng.random((n_anomaly, k)) < 0.5
    flip[np.arange(n_anomaly), rng.integers(0, k, n_anomaly)] = True
    other = (mixed + rng.integers(1, n_profiles, size=mixed.shape)) % n_profiles
    mixed = np.where(flip, other, mixed)
    cont_prof = np.where(rng.random(n_anomaly) < 0.5, (base + 1) % n_profiles, base)
    anomalies = pd.DataFrame(draw(mixed, cont_prof))
    off = np.flatnonzero(rng.random(n_anomaly) < off_profile)
    n_fields = max(1, r // 3)
    for i in off:
        for j in rng.choice(r, size=n_fields, replace=False):
            anomalies.loc[i, f"num{j}"] = rng.uniform(0.0, 1.0) * 100.0
    anomalies["label"] = "attack"

    df = pd.concat([normal, anomalies], ignore_index=True)
    decl = SchemaDecl([f"cat{j}" for j in range(k)], [f"num{j}" for j in range(r)],
                      label="label", normal_values=["normal"])
    return df, decl
