"""KDDCup99 column layout and reader.

The raw ``kddcup.data_10_percent`` file (plain or ``.gz``) has no header: 41 features then the
label (``normal.`` or an attack name with a trailing dot).  A headed CSV with
the same column names is accepted too.
"""
from __future__ import annotations

import gzip
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import pandas as pd

from .data import DataError, SchemaDecl
from .evaluation import (SWEEP_RATIOS, ExperimentConfig, ExperimentReport, _protocol,
                         anomaly_ratio_sweep, split_pools)
from .model import ArchConfig
from .negsampler import SamplerConfig
from .trainer import TrainConfig, substream

log = logging.getLogger(__name__)

ENV_VAR = "CHAD_KDD_PATH"

FEATURES = [
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
    "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in", "num_compromised",
    "root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells",
    "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
    "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate", "dst_host_srv_rerror_rate",
]
LABEL = "label"
CATEGORICAL = ["protocol_type", "service", "flag", "land", "logged_in", "is_guest_login"]
CONTINUOUS = [c for c in FEATURES if c not in CATEGORICAL]


def kdd_decl(frequency_floor: int = 0) -> SchemaDecl:
    """6 categorical + 35 continuous fields; ``normal.`` rows are the normal class."""
    return SchemaDecl(list(CATEGORICAL), list(CONTINUOUS), label=LABEL,
                      normal_values=["normal.", "normal"], frequency_floor=frequency_floor)


def find_kdd(path: str | Path | None = None) -> Path | None:
    p = path or os.environ.get(ENV_VAR)
    if not p:
        return None
    p = Path(p)
    return p if p.exists() else None


def read_kdd(path: str | Path) -> pd.DataFrame:
    """All 42 columns as strings (continuous ones numeric), in file order."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        first = fh.readline().decode(errors="replace")
    headed = first.split(",")[0].strip() == FEATURES[0]
    try:
        df = pd.read_csv(path, header=0 if headed else None, dtype=str,
                         names=None if headed else FEATURES + [LABEL])
    except (OSError, pd.errors.ParserError) as e:
        raise DataError(f"cannot read {path}: {e}") from e
    missing = [c for c in FEATURES + [LABEL] if c not in df.columns]
    if missing:
        raise DataError(f"{path} lacks KDD columns {missing}")
    df = df[FEATURES + [LABEL]].dropna().reset_index(drop=True)
    for c in CONTINUOUS:
        df[c] = pd.to_numeric(df[c], errors="coerce")
    return df.dropna().reset_index(drop=True)


@dataclass
class DeskScaleResult:
    report: ExperimentReport
    sweep: dict[float, float]
    mean_normal_score: float
    mean_attack_score: float


def desk_scale(path: str | Path, exp: ExperimentConfig | None = None, arch: ArchConfig = ArchConfig(),
               train_cfg: TrainConfig = TrainConfig(), sampler: SamplerConfig = SamplerConfig(),
               shares=SWEEP_RATIOS) -> DeskScaleResult:
    """Repeated-run AP on a normal subsample, then the anomaly-share sweep and
    score means on the first run's model."""
    exp = exp or ExperimentConfig(n_runs=3, n_anomaly_sets=3, anomaly_ratio=0.2, train_size=10_000)
    decl = kdd_decl()
    normal, attacks = split_pools(read_kdd(path), decl)
    log.info("KDD pools: %d normal, %d attacks", len(normal), len(attacks))
    reports, (model, prep) = _protocol(normal, attacks, decl, arch, train_cfg, sampler, exp, ("chad",))
    sweep = anomaly_ratio_sweep(model, prep.test_normal, prep.anomalies, shares,
                                seed=int(substream(exp.seed, "run/0").integers(2**31)))
    return DeskScaleResult(reports["chad"], sweep,
                           float(model.anomaly_score(prep.test_normal).mean()),
                           float(model.anomaly_score(prep.anomalies).mean()))
