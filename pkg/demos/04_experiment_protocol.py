"""Repeated-run protocol, anomaly-share sweep and the latent-noise ablation.

Each run draws a fresh train/test split of the normal pool, fits the
schema on the training part, trains one model and scores several random
anomaly mixes with it.  Default 50/10/25 epoch schedule; under a minute.

On this synthetic table the estimator and the reconstruction-error
baseline land close together, well above the 1/6 chance level.  Half the
anomalies differ only by recombined categorical values, which the
estimator picks up weakly.
"""
import numpy as np

from chad import ArchConfig, SamplerConfig, TrainConfig
from chad.evaluation import (ExperimentConfig, anomaly_ratio_sweep, noise_ablation, prepare_run,
                             run_experiment, split_pools)
from chad.model import ChadModel
from chad.synthetic import mixed_table
from chad.trainer import substream, train

df, decl = mixed_table(n_normal=2000, n_anomaly=500, seed=3)
normal, attacks = split_pools(df, decl)
train_cfg = TrainConfig(batch_size=128)
exp = ExperimentConfig(n_runs=3, n_anomaly_sets=3, anomaly_ratio=0.2, seed=0)

reports = run_experiment(normal, attacks, decl, ArchConfig(), train_cfg, SamplerConfig(), exp,
                         scorers=("chad", "fae-r"))
for name, rep in reports.items():
    print(f"{rep.label:<6} {rep.cell()}   ({len(rep.records)} mixes)")

prep = prepare_run(normal, attacks, decl, np.random.default_rng(0))
model = ChadModel(prep.train.schema, ArchConfig(), substream(0, "init"))
model, _ = train(model, prep.train, train_cfg)
print("\nanomaly share -> AP, one model")
for share, ap in anomaly_ratio_sweep(model, prep.test_normal, prep.anomalies).items():
    print(f"  {share:.2f}  {ap:.4f}")

ab = noise_ablation(normal, attacks, decl, ArchConfig(), train_cfg, SamplerConfig(),
                    ExperimentConfig(n_runs=2, n_anomaly_sets=2, seed=0), trace_samples=50_000)
print(f"\nwith latent noise    {ab.with_noise.cell()}")
print(f"without latent noise {ab.without_noise.cell()}")
t = ab.traces["yes"]
print(f"negative latent covariance trace {t['clean']:.3f}, with noise {t['noisy']:.3f} (p = {t['p']})")
