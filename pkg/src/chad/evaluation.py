"""Average precision and the repeated-run experiment protocols."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .data import Dataset, SchemaDecl, build_eval_mix, encode_frame, fit_schema, label_flags
from .model import ArchConfig, ChadModel
from .negsampler import SamplerConfig, perturb_batch
from .trainer import TrainConfig, substream, train

log = logging.getLogger(__name__)

SWEEP_RATIOS = (0.02, 0.04, 0.06, 0.08, 0.10)


class UndefinedAPError(ValueError):
    pass


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray          # 1 = anomaly
    low_is_anomalous: bool = True

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(bool)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels differ in length")

    def ranking(self) -> np.ndarray:
        """Indices from most to least anomalous; ties keep input order."""
        key = self.scores if self.low_is_anomalous else -self.scores
        return np.argsort(key, kind="stable")


def average_precision(s: ScoredSet) -> float:
    """Step-wise AP: sum over ranks of (recall gain) x (precision at that rank)."""
    n_pos = int(s.labels.sum())
    if n_pos == 0:
        raise UndefinedAPError("average precision needs at least one anomaly")
    if n_pos == s.labels.size:
        raise UndefinedAPError("average precision needs at least one normal record")
    hits = s.labels[s.ranking()]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, hits.size + 1)
    return float(precision[hits].sum() / n_pos)


def pr_curve(s: ScoredSet) -> pd.DataFrame:
    """Precision/recall after each rank, for external plotting."""
    hits = s.labels[s.ranking()]
    tp = np.cumsum(hits)
    ranks = np.arange(1, hits.size + 1)
    return pd.DataFrame({"rank": ranks, "precision": tp / ranks, "recall": tp / max(hits.sum(), 1)})


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunRecord:
    run: int
    mix: int
    seed: int
    ratio: float
    ap: float


@dataclass
class ExperimentReport:
    records: list[RunRecord] = field(default_factory=list)
    config_fingerprint: str = ""
    label: str = "CHAD"

    @property
    def aps(self) -> np.ndarray:
        return np.array([r.ap for r in self.records])

    @property
    def mean(self) -> float:
        return float(self.aps.mean())

    @property
    def std(self) -> float:
        return float(self.aps.std(ddof=1)) if len(self.records) > 1 else 0.0

    def cell(self) -> str:
        return f"{self.mean:.5f} (± {self.std:.4f})"

    def to_text(self) -> str:
        lines = [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        lines.append(json.dumps({"summary": self.label, "n": len(self.records),
                                 "mean": self.mean, "std": self.std, "cell": self.cell(),
                                 "config": self.config_fingerprint}, sort_keys=True, ensure_ascii=False))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ExperimentConfig:
    n_runs: int = 10
    n_anomaly_sets: int = 5
    anomaly_ratio: float = 0.2
    test_fraction: float = 0.3
    train_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_runs < 1 or self.n_anomaly_sets < 1:
            raise ValueError("need at least one run and one anomaly set")
        if not 0 < self.anomaly_ratio <= 1:
            raise ValueError("anomaly ratio must be in (0, 1]")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test fraction must be in (0, 1)")
        if self.train_size is not None and self.train_size < 1:
            raise ValueError("train size must be positive")


def split_pools(df: pd.DataFrame, decl: SchemaDecl) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Separate normal and anomalous rows using the declared label column."""
    flags = label_flags(df, decl).astype(bool)
    return df[~flags].reset_index(drop=True), df[flags].reset_index(drop=True)


@dataclass
class PreparedRun:
    train: Dataset
    test_normal: Dataset
    anomalies: Dataset


def prepare_run(normal_df: pd.DataFrame, anomaly_df: pd.DataFrame, decl: SchemaDecl,
                rng: np.random.Generator, test_fraction: float = 0.3,
                train_size: int | None = None) -> PreparedRun:
    """Random train/test split of the normal pool; schema fitted on the training part only."""
    order = rng.permutation(len(normal_df))
    n_test = int(round(test_fraction * len(normal_df)))
    test_idx, train_idx = order[:n_test], order[n_test:]
    if train_size is not None:
        train_idx = train_idx[:train_size]
    tr = normal_df.iloc[train_idx]
    schema = fit_schema(tr, decl)
    train_ds, _ = encode_frame(tr, schema)
    test_ds, rej_t = encode_frame(normal_df.iloc[test_idx], schema)
    anom_ds, rej_a = encode_frame(anomaly_df, schema)
    log.info("split: train %d, test normal %d (%d unseen dropped), anomalies %d (%d dropped)",
             len(train_ds), len(test_ds), rej_t.sum(), len(anom_ds), rej_a.sum())
    return PreparedRun(train_ds, test_ds, anom_ds)


def score_mixes(model: ChadModel, prep: PreparedRun, n_sets: int, ratio: float, seed: int,
                run: int, scorer: str = "chad") -> list[RunRecord]:
    out = []
    for j in range(n_sets):
        mix_seed = int(substream(seed, f"mix/{run}/{j}").integers(2**31))
        rng = np.random.default_rng(mix_seed)
        mix = build_eval_mix(prep.test_normal, prep.anomalies, ratio, rng)
        out.append(RunRecord(run, j, mix_seed, ratio, evaluate(model, mix, rng, scorer)))
    return out


def evaluate(model: ChadModel, mix: Dataset, rng: np.random.Generator, scorer: str = "chad") -> float:
    """AP of one labelled mix; a seeded shuffle randomizes how score ties are broken."""
    perm = rng.permutation(len(mix))
    shuffled = mix.subset(perm)
    if scorer == "chad":
        s = ScoredSet(model.anomaly_score(shuffled), shuffled.labels, low_is_anomalous=True)
    elif scorer == "fae-r":
        s = ScoredSet(model.reconstruction_score(shuffled), shuffled.labels, low_is_anomalous=False)
    else:
        raise ValueError(f"unknown scorer {scorer!r}")
    return average_precision(s)


def run_experiment(normal_df: pd.DataFrame, anomaly_df: pd.DataFrame, decl: SchemaDecl,
                   arch: ArchConfig = ArchConfig(), train_cfg: TrainConfig = TrainConfig(),
                   sampler: SamplerConfig = SamplerConfig(), exp: ExperimentConfig = ExperimentConfig(),
                   scorers: Sequence[str] = ("chad",)) -> dict[str, ExperimentReport]:
    """Train one model per run on a fresh split and score several anomaly mixes with it."""
    return _protocol(normal_df, anomaly_df, decl, arch, train_cfg, sampler, exp, scorers)[0]


def _protocol(normal_df, anomaly_df, decl, arch, train_cfg, sampler, exp, scorers):
    first = None
    fp = fingerprint({"arch": asdict(arch), "train": asdict(train_cfg),
                      "sampler": asdict(sampler), "exp": asdict(exp)})
    reports = {s: ExperimentReport(config_fingerprint=fp, label=s.upper()) for s in scorers}
    for run in range(exp.n_runs):
        run_seed = int(substream(exp.seed, f"run/{run}").integers(2**31))
        prep = prepare_run(normal_df, anomaly_df, decl, substream(run_seed, "split"),
                           exp.test_fraction, exp.train_size)
        model = ChadModel(prep.train.schema, arch, substream(run_seed, "init"))
        cfg = TrainConfig(**{**asdict(train_cfg), "seed": run_seed})
        try:
            model, _ = train(model, prep.train, cfg, sampler)
        except Exception as e:
            raise RuntimeError(f"run {run} (seed {run_seed}) failed: {e}") from e
        for s in scorers:
            reports[s].records += score_mixes(model, prep, exp.n_anomaly_sets, exp.anomaly_ratio,
                                              run_seed, run, s)
        log.info("run %d done: %s", run, {s: reports[s].records[-1].ap for s in scorers})
        if first is None:
            first = (model, prep)
    return reports, first


def ratio_for_share(share: float) -> float:
    """Anomaly:normal ratio giving ``share`` anomalies in the combined test set."""
    return share / (1.0 - share)


def anomaly_ratio_sweep(model: ChadModel, test_normal: Dataset, anomalies: Dataset,
                        shares: Sequence[float] = SWEEP_RATIOS, seed: int = 0) -> dict[float, float]:
    """AP per anomaly share of the combined test set, all from the same trained model."""
    out = {}
    for share in shares:
        rng = substream(seed, f"sweep/{share}")
        mix = build_eval_mix(test_normal, anomalies, ratio_for_share(share), rng)
        out[share] = evaluate(model, mix, rng)
    return out


def latent_trace(model: ChadModel, data: Dataset, sampler: SamplerConfig, n: int,
                 rng: np.random.Generator) -> dict[str, float]:
    """Covariance traces of negative latents with and without the secondary noise."""
    src = rng.integers(0, len(data), size=max(1, n // sampler.negatives))
    nc, nv = perturb_batch(data.cat[src], data.cont[src], data.schema, sampler, rng)
    z = model.encode(nc[:n], nv[:n])
    noisy = z + rng.standard_normal(z.shape)
    return {"clean": float(np.trace(np.cov(z, rowvar=False))),
            "noisy": float(np.trace(np.cov(noisy, rowvar=False))),
            "p": model.latent_dim, "n": int(z.shape[0])}


@dataclass
class AblationResult:
    with_noise: ExperimentReport
    without_noise: ExperimentReport
    traces: dict[str, dict[str, float]]

    def to_text(self) -> str:
        head = json.dumps({"latent_noise": {"yes": self.with_noise.cell(),
                                            "no": self.without_noise.cell()},
                           "traces": self.traces}, sort_keys=True, ensure_ascii=False)
        return head + "\n" + self.with_noise.to_text() + self.without_noise.to_text()


def noise_ablation(normal_df: pd.DataFrame, anomaly_df: pd.DataFrame, decl: SchemaDecl,
                   arch: ArchConfig = ArchConfig(), train_cfg: TrainConfig = TrainConfig(),
                   sampler: SamplerConfig = SamplerConfig(), exp: ExperimentConfig = ExperimentConfig(),
                   trace_samples: int = 20000) -> AblationResult:
    """Same protocol and seeds twice, toggling only the secondary latent noise."""
    reports, traces = {}, {}
    for flag in (True, False):
        s = SamplerConfig(**{**asdict(sampler), "latent_noise": flag})
        reps, (model, prep) = _protocol(normal_df, anomaly_df, decl, arch, train_cfg, s, exp, ("chad",))
        reports[flag] = reps["chad"]
        reports[flag].label = "CHAD" + ("" if flag else " (no latent noise)")
        # traces come from the first run's model
        traces["yes" if flag else "no"] = latent_trace(model, prep.train, s, trace_samples,
                                                        substream(exp.seed, "trace"))
    return AblationResult(reports[True], reports[False], traces)


def write_pr_csv(s: ScoredSet, path: str | Path) -> None:
    pr_curve(s).to_csv(path, index=False)
