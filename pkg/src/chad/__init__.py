"""Anomaly detection for mixed categorical/continuous tables.

An asymmetric autoencoder compresses each record; a small estimator network,
trained to tell latent codes of real records from codes of perturbed ones,
gives the anomaly score (low = anomalous).
"""
from .data import (DataError, Dataset, Schema, SchemaDecl, UnseenEntityError, build_eval_mix,
                   encode_for_test, fit_schema, load_csv, read_decl, write_decl)
from .evaluation import (ExperimentConfig, ExperimentReport, ScoredSet, anomaly_ratio_sweep,
                         average_precision, noise_ablation, run_experiment)
from .model import ArchConfig, ChadModel, estimation_loss, load_model, save_model
from .negsampler import SamplerConfig, perturb_batch, sampler_stats
from .trainer import TrainConfig, schedule, train

__version__ = "0.1.0"

__all__ = [
    "ArchConfig", "ChadModel", "DataError", "Dataset", "ExperimentConfig", "ExperimentReport",
    "SamplerConfig", "Schema", "SchemaDecl", "ScoredSet", "TrainConfig", "UnseenEntityError",
    "anomaly_ratio_sweep", "average_precision", "build_eval_mix", "encode_for_test",
    "estimation_loss", "fit_schema", "load_csv", "load_model", "noise_ablation", "perturb_batch",
    "read_decl", "run_experiment", "sampler_stats", "save_model", "schedule", "train", "write_decl",
]
