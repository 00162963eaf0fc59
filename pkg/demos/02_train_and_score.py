"""Train CHAD on a synthetic mixed table and score a labelled hold-out.

The table has four categorical fields and six continuous ones.  Normal rows
follow one of four latent profiles; anomalies recombine fields across
profiles and half of them also carry out-of-profile continuous values.
Both the estimator score (low = anomalous) and the reconstruction-error
baseline are ranked against the labels.

    python demos/02_train_and_score.py [pr_curve.csv]
"""
import sys

import numpy as np

from chad import ArchConfig, ChadModel, SamplerConfig, TrainConfig, train
from chad.data import build_eval_mix, encode_frame, fit_schema
from chad.evaluation import ScoredSet, average_precision, split_pools, write_pr_csv
from chad.synthetic import mixed_table
from chad.trainer import substream

df, decl = mixed_table(n_normal=3000, n_anomaly=600, seed=0)
normal, attacks = split_pools(df, decl)
rng = np.random.default_rng(0)
order = rng.permutation(len(normal))
train_df, test_df = normal.iloc[order[:2100]], normal.iloc[order[2100:]]

schema = fit_schema(train_df, decl)
print(f"schema: k={schema.k} categorical (arities {schema.arities}), r={schema.r} continuous")
train_ds, _ = encode_frame(train_df, schema)
test_ds, _ = encode_frame(test_df, schema)
anom_ds, rejected = encode_frame(attacks, schema)
print(f"train {len(train_ds)}, test normal {len(test_ds)}, anomalies {len(anom_ds)} "
      f"({int(rejected.sum())} dropped for unseen entities)")

model = ChadModel(schema, ArchConfig(), substream(0, "init"))
print(f"input width {model.input_dim}, latent {model.latent_dim}, estimator {model.estimator_shape}")
cfg = TrainConfig(batch_size=128, seed=0)


def progress(e):
    fmt = lambda v: "   -   " if v is None else f"{v:7.4f}"
    if e.epoch % 10 == 0 or e.epoch in (55, 85):
        print(f"  epoch {e.epoch:3d} phase {e.phase}  rec {fmt(e.mean_rec_loss)}  est {fmt(e.mean_est_loss)}")


model, log = train(model, train_ds, cfg, SamplerConfig(), on_epoch=progress)

mix = build_eval_mix(test_ds, anom_ds, 0.2, np.random.default_rng(1))
chad = ScoredSet(model.anomaly_score(mix), mix.labels, low_is_anomalous=True)
recon = ScoredSet(model.reconstruction_score(mix), mix.labels, low_is_anomalous=False)
print(f"\n{int(mix.labels.sum())} anomalies among {len(mix)} records")
print(f"AP, estimator score:        {average_precision(chad):.4f}")
print(f"AP, reconstruction error:   {average_precision(recon):.4f}")
print(f"AP, random ranking:         {mix.labels.mean():.4f}")

s = model.anomaly_score(mix)
print(f"mean score normal {s[mix.labels == 0].mean():.3f}, anomalies {s[mix.labels == 1].mean():.3f}")
if len(sys.argv) > 1:
    write_pr_csv(chad, sys.argv[1])
