"""Audit the negative sampler on a KDD-shaped schema.

Six categorical fields with the arities of the intrusion data (protocol,
service, flag and three binary flags) and 35 continuous features.  Shows a
few perturbed copies of one record, then checks the empirical field
selection rates against the dampened arity weights.
"""
import numpy as np
import pandas as pd

from chad.data import CategoricalField, ContinuousField, Schema
from chad.negsampler import (SamplerConfig, category_probs, cont_group_sizes, n_cat_perturbed_max,
                             perturb_batch, sampler_stats)

names = ["protocol_type", "service", "flag", "land", "logged_in", "is_guest_login"]
arities = [3, 65, 11, 2, 2, 2]
schema = Schema(tuple(CategoricalField(n, tuple(f"{n}{i}" for i in range(a))) for n, a in zip(names, arities)),
                tuple(ContinuousField(f"c{j}", 0.0, 1.0) for j in range(35)))
cfg = SamplerConfig()

print(f"up to {n_cat_perturbed_max(schema.k)} categorical fields changed per negative")
up, down = cont_group_sizes(schema.r)
print(f"{up} continuous features raised by U+{cfg.delta}, {down} moved by U-{cfg.delta}")

rng = np.random.default_rng(0)
cat = rng.integers(0, arities, size=(1, 6))
cont = rng.random((1, 35))
nc, nv = perturb_batch(cat, cont, schema, cfg, rng, m=5)
print("\nsource record  ", cat[0].tolist())
for row, v in zip(nc, nv):
    changed = np.flatnonzero(row != cat[0])
    moved = np.abs(v - cont[0]) > 0
    print(f"negative       {row.tolist()}  fields changed {[names[i] for i in changed]}, "
          f"{int(moved.sum())} continuous moved")

stats = sampler_stats(schema, cfg, 100_000, np.random.default_rng(1))
tab = pd.DataFrame({"arity": arities, "weight": category_probs(arities).probs,
                    "observed": stats["selection_freq"]}, index=names)
print("\nselection share per field over 1e5 negatives")
print(tab.round(4).to_string())
print(f"\nfields selected per negative {stats['mean_fields_selected']:.3f}, "
      f"actually changed {stats['mean_fields_changed']:.3f}")
print(f"mean upward shift {stats['up_noise_mean']:.4f}, other group {stats['down_noise_mean']:.4f}")

# Several fields are drawn per negative without replacement, so the shares
# above are flatter than the weights.  With three fields at most one is
# changed, and the shares match the weights directly.
small = Schema(tuple(CategoricalField(f"f{a}", tuple(str(i) for i in range(a))) for a in (100, 10, 1)),
               tuple(ContinuousField(f"c{j}", 0.0, 1.0) for j in range(35)))
st = sampler_stats(small, cfg, 100_000, np.random.default_rng(2))
print("\narities [100, 10, 1]: weights", np.round(st["selection_probs"], 4).tolist(),
      "observed", np.round(st["selection_freq"], 4).tolist())
print(f"changed per negative {st['mean_fields_changed']:.3f} (the singleton field cannot change)")
