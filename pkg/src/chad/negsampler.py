"""Negative samples for heterogeneous records by random-subspace perturbation.

Each negative copies an observed record, swaps the entities of a few
categorical fields (fields picked with arity-dampened probabilities) and
pushes two disjoint groups of continuous features up or down by shifted
uniform noise.  Continuous values are deliberately not clamped, so negatives
can leave the [0, 1] box the observed data lives in.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EncodedRecord, Schema


@dataclass(frozen=True)
class SamplerConfig:
    negatives: int = 10
    delta: float = 0.5
    dampening: float = 0.75
    latent_noise: bool = True

    def __post_init__(self):
        if self.negatives < 1:
            raise ValueError("need at least one negative per instance")
        if self.delta < 0:
            raise ValueError("noise deviation must be non-negative")


@dataclass(frozen=True)
class CategoryPicker:
    probs: np.ndarray

    def __post_init__(self):
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError("field probabilities must be non-negative and sum to 1")


def category_probs(arities, exponent: float = 0.75) -> CategoryPicker:
    a = np.asarray(arities, dtype=np.float64)
    if a.size == 0:
        raise ValueError("empty arity list")
    if np.any(a < 1):
        raise ValueError("arities must be >= 1")
    q = (a / a.sum()) ** exponent
    return CategoryPicker(q / q.sum())


def n_cat_perturbed_max(k: int) -> int:
    return max(1, k // 2) if k else 0


def cont_group_sizes(r: int) -> tuple[int, int]:
    """Sizes of the (+delta, -delta) feature groups."""
    if r >= 4:
        return r // 4, r // 4
    if r == 0:
        return 0, 0
    total = max(1, r // 2)
    return (total + 1) // 2, total // 2


def _weighted_without_replacement(probs: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Per row, a random ordering of fields equivalent to successive weighted draws.

    Exponential-race keys: sorting ``E / p`` ascending yields the same law as
    drawing fields one at a time proportional to ``p`` without replacement.
    """
    keys = rng.standard_exponential((n, probs.size)) / probs
    return np.argsort(keys, axis=1, kind="stable")


def perturb_batch(cat: np.ndarray, cont: np.ndarray, schema: Schema, config: SamplerConfig,
                  rng: np.random.Generator, m: int | None = None, details: bool = False):
    """``m`` negatives per row (default ``config.negatives``).

    Output rows are grouped by source: negatives of row ``i`` occupy
    ``[i*m, (i+1)*m)``.  With ``details`` a third item is returned holding the
    selected-field mask and the masks of the two continuous groups.
    """
    m = config.negatives if m is None else m
    n = cat.shape[0]
    total = n * m
    neg_cat = np.repeat(cat, m, axis=0)
    neg_cont = np.repeat(cont, m, axis=0).astype(np.float64, copy=True)
    k, r = schema.k, schema.r
    chosen = np.zeros((total, k), dtype=bool)
    up_mask = np.zeros((total, r), dtype=bool)
    down_mask = np.zeros((total, r), dtype=bool)

    if k:
        arities = np.asarray(schema.arities)
        picker = category_probs(arities, config.dampening)
        counts = rng.integers(1, n_cat_perturbed_max(k) + 1, size=total)
        order = _weighted_without_replacement(picker.probs, total, rng)
        rows = np.arange(total)
        for slot in range(n_cat_perturbed_max(k)):
            sel = counts > slot
            chosen[rows[sel], order[sel, slot]] = True
        # uniform over the other a_w - 1 entities; singleton fields cannot change
        a = np.broadcast_to(arities, (total, k))
        shift = np.floor(rng.random((total, k)) * np.maximum(a - 1, 1)).astype(np.int64) + 1
        swap = chosen & (a > 1)
        neg_cat = np.where(swap, (neg_cat + shift) % a, neg_cat)

    if r:
        up, down = cont_group_sizes(r)
        perm = np.argsort(rng.random((total, r)), axis=1)
        noise = np.zeros((total, r))
        rows = np.arange(total)[:, None]
        if up:
            noise[rows, perm[:, :up]] = rng.random((total, up)) + config.delta
            up_mask[rows, perm[:, :up]] = True
        if down:
            noise[rows, perm[:, up:up + down]] = rng.random((total, down)) - config.delta
            down_mask[rows, perm[:, up:up + down]] = True
        neg_cont += noise

    if details:
        return neg_cat, neg_cont, {"chosen": chosen, "up": up_mask, "down": down_mask}
    return neg_cat, neg_cont


def perturb_record(x: EncodedRecord, schema: Schema, config: SamplerConfig,
                   rng: np.random.Generator) -> list[EncodedRecord]:
    c, v = perturb_batch(x.cat[None, :], x.cont[None, :], schema, config, rng)
    return [EncodedRecord(c[i], v[i]) for i in range(c.shape[0])]


def inject_latent_noise(z: np.ndarray, rng: np.random.Generator, enabled: bool = True) -> np.ndarray:
    """Add isotropic standard-normal noise to each latent row."""
    if not enabled:
        return z
    if z.ndim != 2 or z.shape[1] < 1:
        raise ValueError("latent batch must be (n, p) with p >= 1")
    return z + rng.standard_normal(z.shape).astype(z.dtype, copy=False)


def sampler_stats(schema: Schema, config: SamplerConfig, n: int, rng: np.random.Generator) -> dict:
    """Empirical audit of the sampler over ``n`` negatives of a mid-range record."""
    cat = np.zeros((1, schema.k), np.int64)
    cont = np.full((1, schema.r), 0.5)
    nc, nv, info = perturb_batch(cat, cont, schema, config, rng, m=n, details=True)
    out: dict = {"n": n, "k": schema.k, "r": schema.r, "delta": config.delta,
                 "dampening": config.dampening}
    if schema.k:
        chosen = info["chosen"]
        out["selection_probs"] = category_probs(schema.arities, config.dampening).probs.tolist()
        # share of all field selections that went to each field
        out["selection_freq"] = (chosen.sum(axis=0) / chosen.sum()).tolist()
        out["mean_fields_selected"] = float(chosen.sum(axis=1).mean())
        out["mean_fields_changed"] = float((nc != cat).sum(axis=1).mean())
    if schema.r:
        d = nv - cont
        out["cont_perturbed_per_sample"] = float((info["up"] | info["down"]).sum(axis=1).mean())
        out["up_noise_mean"] = float(d[info["up"]].mean()) if info["up"].any() else None
        out["down_noise_mean"] = float(d[info["down"]].mean()) if info["down"].any() else None
    return out
