"""Command line entry point: ``chad <command> [--config run.ini] [flags]``.

Configuration is an INI file with sections ``run``, ``data``, ``model``,
``train``, ``sampler``, ``experiment``, ``score``; every key except the data paths has
a default.  Each command writes ``config.echo.ini`` with all resolved values
to its output directory, and that file alone reproduces the run.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .data import DataError, SchemaDecl, encode_frame, load_csv, read_decl, read_table
from .evaluation import (SWEEP_RATIOS, ExperimentConfig, _protocol, anomaly_ratio_sweep,
                         noise_ablation, split_pools)
from .model import ArchConfig, ChadModel, ModelFormatError, SchemaMismatchError, TrainingError, \
    load_model, save_model
from .motivation import SCORERS, SyntheticConfig, format_table, run_motivation
from .negsampler import SamplerConfig, sampler_stats
from .nn import OptimizerError
from .trainer import TrainConfig, substream, train

log = logging.getLogger("chad")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 2, 3, 4


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = list(problems)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DataPaths:
    schema: str | None = None
    train: str | None = None
    labeled: str | None = None


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "chad-out"


@dataclass(frozen=True)
class ExperimentSection:
    n_runs: int = 10
    n_anomaly_sets: int = 5
    anomaly_ratio: float = 0.2
    test_fraction: float = 0.3
    train_size: int | None = None
    ratios: tuple[float, ...] = SWEEP_RATIOS


@dataclass(frozen=True)
class ScoreSection:
    model: str | None = None
    data: str | None = None
    threshold: float | None = None
    with_fae_r: bool = False
    sorted: bool = False


# INI section -> dataclass holding its keys
SECTIONS = {
    "run": RunSection,
    "data": DataPaths,
    "model": ArchConfig,
    "train": TrainConfig,
    "sampler": SamplerConfig,
    "experiment": ExperimentSection,
    "score": ScoreSection,
}
# seeds live in [run] only
_HIDDEN = {("train", "seed")}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataPaths = field(default_factory=DataPaths)
    model: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    score: ScoreSection = field(default_factory=ScoreSection)

    @property
    def seed(self) -> int:
        return self.run.seed

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    def experiment_config(self) -> ExperimentConfig:
        e = self.experiment
        return ExperimentConfig(e.n_runs, e.n_anomaly_sets, e.anomaly_ratio, e.test_fraction,
                                e.train_size, self.seed)

    def to_ini(self) -> str:
        lines = []
        for sec in SECTIONS:
            lines.append(f"[{sec}]")
            obj = getattr(self, sec)
            for f in fields(obj):
                if (sec, f.name) in _HIDDEN:
                    continue
                lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def fingerprint(self) -> str:
        """Hash of everything that affects results; the output directory is left out."""
        same = replace(self, run=replace(self.run, out=""))
        return hashlib.sha256(same.to_ini().encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, default, name: str):
    s = raw.strip()
    if s.lower() == "none":
        return None
    if isinstance(default, bool):
        low = s.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        kind = type(default[0]) if default else float
        try:
            return tuple(kind(t) for t in s.replace(";", ",").split(",") if t.strip())
        except ValueError:
            raise ValueError(f"{name}: expected a list of {kind.__name__}, got {raw!r}") from None
    if name == "score.threshold":
        try:
            return float(s)
        except ValueError:
            raise ValueError(f"{name}: expected a number, got {raw!r}") from None
    if isinstance(default, int) or name.endswith("train_size"):
        try:
            return int(s)
        except ValueError:
            raise ValueError(f"{name}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(s)
        except ValueError:
            raise ValueError(f"{name}: expected a number, got {raw!r}") from None
    return s


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the INI file, then ``overrides`` {(section, key): value}.

    Every problem found is collected and raised together as a ConfigError.
    """
    problems: list[str] = []
    values: dict[str, dict] = {sec: {} for sec in SECTIONS}
    if path is not None:
        cp = configparser.ConfigParser(inline_comment_prefixes=(";",))
        try:
            if not cp.read(path):
                raise ConfigError([f"cannot read config file {path}"])
        except configparser.Error as e:
            raise ConfigError([f"cannot parse {path}: {e}"]) from e
        for sec in cp.sections():
            if sec not in SECTIONS:
                problems.append(f"unknown section [{sec}]")
                continue
            defaults = {f.name: f.default for f in fields(SECTIONS[sec])}
            for key, raw in cp[sec].items():
                if key not in defaults or (sec, key) in _HIDDEN:
                    problems.append(f"unknown key {sec}.{key}")
                    continue
                try:
                    values[sec][key] = _parse(raw, defaults[key], f"{sec}.{key}")
                except ValueError as e:
                    problems.append(str(e))
    for (sec, key), v in (overrides or {}).items():
        values[sec][key] = v
    built = {}
    for sec, cls in SECTIONS.items():
        try:
            built[sec] = cls(**values[sec])
        except (ValueError, TypeError) as e:
            problems.append(f"[{sec}] {e}")
    if problems:
        raise ConfigError(problems)
    return RunConfig(**built)


def require(cfg: RunConfig, *keys: str) -> None:
    missing = [f"data.{k} is required" for k in keys if not getattr(cfg.data, k)]
    if missing:
        raise ConfigError(missing)


# ---------------------------------------------------------------------------
# commands


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo.ini").write_text(cfg.to_ini())
    return out


def _report_header(cfg: RunConfig, command: str, **extra) -> str:
    head = {"command": command, "seed": cfg.seed, "config_fingerprint": cfg.fingerprint(), **extra}
    return json.dumps(head, sort_keys=True, ensure_ascii=False) + "\n"


def cmd_train(cfg: RunConfig) -> Path:
    require(cfg, "schema", "train")
    decl = read_decl(cfg.data.schema)
    ds, report = load_csv(cfg.data.train, decl)
    log.info("training data: %d records (%s); schema %s", len(ds), asdict(report), ds.schema.summary())
    out = _out_dir(cfg)
    model = ChadModel(ds.schema, cfg.model, substream(cfg.seed, "init"))
    model, tlog = train(model, ds.unlabeled(), cfg.train_config(), cfg.sampler)
    save_model(model, out / "model.chad")
    tlog.write(out / "train_log.jsonl")
    return out / "model.chad"


def cmd_score(cfg: RunConfig) -> Path:
    """Score every row of ``score.data``; rows that cannot be encoded go to a sidecar file."""
    sc = cfg.score
    missing = [f"score.{k} is required" for k in ("model", "data") if not getattr(sc, k)]
    if missing:
        raise ConfigError(missing)
    model_path, data_path = sc.model, sc.data
    try:
        model = load_model(model_path)
    except OSError as e:
        raise DataError(f"cannot read model {model_path}: {e}") from e
    schema = model.schema
    cat_names = [f.name for f in schema.categorical]
    cont_names = [f.name for f in schema.continuous]
    try:
        df = pd.read_csv(data_path, dtype=str, keep_default_na=False, na_values=[""])
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read {data_path}: {e}") from e
    absent = [c for c in cat_names + cont_names if c not in df.columns]
    if absent:
        raise SchemaMismatchError(f"{data_path} lacks model fields {absent}")
    df = df[cat_names + cont_names].copy()
    ids = np.arange(len(df))
    reason = pd.Series("", index=df.index, dtype=object)
    for c in cont_names:
        df[c] = pd.to_numeric(df[c], errors="coerce")
    reason[df.isna().any(axis=1)] = "missing or unparsable value"
    for f in schema.categorical:
        unseen = (reason == "") & ~df[f.name].astype(str).isin(f.index)
        reason[unseen] = f"unseen entity in field {f.name}"
    keep = (reason == "").to_numpy()
    ds, _ = encode_frame(df[keep], schema)
    out = _out_dir(cfg)
    scores = pd.DataFrame({"id": ids[keep], "score": model.anomaly_score(ds)})
    if sc.with_fae_r:
        scores["recon_score"] = model.reconstruction_score(ds)
    if sc.threshold is not None:
        scores["flag"] = (scores["score"] < sc.threshold).astype(int)
    if sc.sorted:
        scores = scores.sort_values("score", kind="stable")
    scores.to_csv(out / "scores.csv", index=False, float_format="%.17g")
    pd.DataFrame({"id": ids[~keep], "reason": reason[~keep].to_numpy()}).to_csv(
        out / "rejected.csv", index=False)
    log.info("scored %d rows, rejected %d", int(keep.sum()), int((~keep).sum()))
    return out / "scores.csv"


def _labeled_pools(cfg: RunConfig) -> tuple[pd.DataFrame, pd.DataFrame, SchemaDecl]:
    require(cfg, "schema", "labeled")
    decl = read_decl(cfg.data.schema)
    if not decl.label:
        raise ConfigError(["schema declaration needs a label column for evaluation"])
    df, _ = read_table(cfg.data.labeled, decl)
    normal, anomalies = split_pools(df, decl)
    if len(normal) == 0 or len(anomalies) == 0:
        raise DataError("labeled data needs both normal and anomalous rows")
    return normal, anomalies, decl


def cmd_eval(cfg: RunConfig, with_fae_r: bool = False) -> dict:
    normal, anomalies, decl = _labeled_pools(cfg)
    scorers = ("chad", "fae-r") if with_fae_r else ("chad",)
    reports, _ = _protocol(normal, anomalies, decl, cfg.model, cfg.train_config(), cfg.sampler,
                           cfg.experiment_config(), scorers)
    out = _out_dir(cfg)
    with open(out / "eval_report.jsonl", "w") as fh:
        fh.write(_report_header(cfg, "eval"))
        for r in reports.values():
            fh.write(r.to_text())
    for name, r in reports.items():
        print(f"{r.label:<6} {r.cell()}")
    return reports


def cmd_sweep(cfg: RunConfig) -> dict[float, float]:
    normal, anomalies, decl = _labeled_pools(cfg)
    exp = replace(cfg.experiment_config(), n_runs=1, n_anomaly_sets=1)
    _, (model, prep) = _protocol(normal, anomalies, decl, cfg.model, cfg.train_config(),
                                 cfg.sampler, exp, ("chad",))
    result = anomaly_ratio_sweep(model, prep.test_normal, prep.anomalies, cfg.experiment.ratios,
                                 cfg.seed)
    out = _out_dir(cfg)
    with open(out / "sweep_report.jsonl", "w") as fh:
        fh.write(_report_header(cfg, "sweep"))
        for share, ap in result.items():
            fh.write(json.dumps({"anomaly_share": share, "ap": ap}) + "\n")
    for share, ap in result.items():
        print(f"{share * 100:5.1f}%  {ap:.5f}")
    return result


def cmd_ablation(cfg: RunConfig):
    normal, anomalies, decl = _labeled_pools(cfg)
    res = noise_ablation(normal, anomalies, decl, cfg.model, cfg.train_config(), cfg.sampler,
                         cfg.experiment_config())
    out = _out_dir(cfg)
    (out / "ablation_report.jsonl").write_text(_report_header(cfg, "ablation") + res.to_text())
    print(f"latent noise yes  {res.with_noise.cell()}")
    print(f"latent noise no   {res.without_noise.cell()}")
    return res


def cmd_motivation(cfg: RunConfig, dump: bool = False) -> dict[str, float]:
    """AP table of the 2-D toy study, averaged over ``experiment.n_runs`` seeds."""
    syn = SyntheticConfig(seed=cfg.seed)
    tables = []
    out = _out_dir(cfg)
    for i in range(cfg.experiment.n_runs):
        seed = cfg.seed + i
        if dump and i == 0:
            table, pts, labels, scores = run_motivation(syn, seed=seed, return_scores=True)
            frame = pd.DataFrame({"x": pts[:, 0], "y": pts[:, 1], "anomaly": labels.astype(int)})
            for name in SCORERS:
                frame[name] = scores[name]
            frame.to_csv(out / "motivation_points.csv", index=False, float_format="%.17g")
        else:
            table = run_motivation(syn, seed=seed)
        tables.append(table)
    mean = {name: float(np.mean([t[name] for t in tables])) for name in SCORERS}
    with open(out / "motivation_report.jsonl", "w") as fh:
        fh.write(_report_header(cfg, "motivation", synthetic=json.loads(json.dumps(asdict(syn)))))
        for i, t in enumerate(tables):
            fh.write(json.dumps({"seed": cfg.seed + i, **t}) + "\n")
    print(format_table(mean), end="")
    return mean


def cmd_negsample_stats(cfg: RunConfig, n: int = 100_000) -> dict:
    require(cfg, "schema", "train")
    decl = read_decl(cfg.data.schema)
    ds, _ = load_csv(cfg.data.train, decl)
    stats = sampler_stats(ds.schema, cfg.sampler, n, substream(cfg.seed, "negsample-stats"))
    out = _out_dir(cfg)
    (out / "negsample_stats.json").write_text(
        _report_header(cfg, "negsample-stats") + json.dumps(stats, sort_keys=True) + "\n")
    print(json.dumps(stats, indent=1, sort_keys=True))
    return stats


# ---------------------------------------------------------------------------
# argument handling


def _ratios(s: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in s.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratio list {s!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty ratio list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--out", help="output directory (overrides run.out)")
    common.add_argument("--no-latent-noise", action="store_true",
                        help="disable the noise added to negative latents")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="chad", description="Anomaly detection for mixed tabular data.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a model on normal records")
    sc = sub.add_parser("score", parents=[common], help="score records with a trained model")
    sc.add_argument("--model", help="model file (overrides score.model)")
    sc.add_argument("--data", help="CSV to score (overrides score.data)")
    sc.add_argument("--threshold", type=float, help="flag rows whose score is below this")
    sc.add_argument("--with-fae-r", action="store_true", help="also write reconstruction error")
    sc.add_argument("--sorted", action="store_true", help="most anomalous rows first")
    for name, text in (("eval", "repeated-run AP on a labeled set"),
                       ("sweep", "AP across anomaly shares"),
                       ("ablation", "AP with and without latent noise")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--runs", type=int)
        sp.add_argument("--anomaly-sets", type=int)
        if name == "eval":
            sp.add_argument("--with-fae-r", action="store_true")
        if name == "sweep":
            sp.add_argument("--ratios", type=_ratios, help="comma-separated anomaly shares")
    mo = sub.add_parser("motivation", parents=[common], help="2-D toy comparison of scorers")
    mo.add_argument("--runs", type=int, help="number of seeds (default 1)")
    mo.add_argument("--dump", action="store_true", help="write points and scores as CSV")
    ns = sub.add_parser("negsample-stats", parents=[common], help="audit the negative sampler")
    ns.add_argument("-n", type=int, default=100_000)
    return p


def _overrides(args) -> dict:
    ov = {}
    if args.seed is not None:
        ov[("run", "seed")] = args.seed
    if args.out is not None:
        ov[("run", "out")] = args.out
    if args.no_latent_noise:
        ov[("sampler", "latent_noise")] = False
    if getattr(args, "runs", None) is not None:
        ov[("experiment", "n_runs")] = args.runs
    elif args.command == "motivation":
        ov[("experiment", "n_runs")] = 1
    if getattr(args, "anomaly_sets", None) is not None:
        ov[("experiment", "n_anomaly_sets")] = args.anomaly_sets
    if args.command == "score":
        for key in ("model", "data", "threshold"):
            if getattr(args, key) is not None:
                ov[("score", key)] = getattr(args, key)
        if args.with_fae_r:
            ov[("score", "with_fae_r")] = True
        if args.sorted:
            ov[("score", "sorted")] = True
    if getattr(args, "ratios", None) is not None:
        ov[("experiment", "ratios")] = args.ratios
    return ov


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "train":
            print(cmd_train(cfg))
        elif args.command == "score":
            print(cmd_score(cfg))
        elif args.command == "eval":
            cmd_eval(cfg, args.with_fae_r)
        elif args.command == "sweep":
            cmd_sweep(cfg)
        elif args.command == "ablation":
            cmd_ablation(cfg)
        elif args.command == "motivation":
            cmd_motivation(cfg, args.dump)
        elif args.command == "negsample-stats":
            cmd_negsample_stats(cfg, args.n)
    except ConfigError as e:
        print(f"chad: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ModelFormatError, SchemaMismatchError) as e:
        print(f"chad: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, OptimizerError, FloatingPointError) as e:
        print(f"chad: training failed: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except RuntimeError as e:
        # run-level wrapper from the experiment protocol
        if isinstance(e.__cause__, (TrainingError, OptimizerError, FloatingPointError)):
            print(f"chad: training failed: {e}", file=sys.stderr)
            return EXIT_TRAINING
        raise
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
