"""Tabular ingestion: schema declarations, categorical indexing, 0-1 scaling, eval mixes."""
from __future__ import annotations

import configparser
import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

SCHEMA_DECL_FORMAT = "chad-schema-1"
DATASET_FORMAT = "chad-dataset-1"


class DataError(ValueError):
    pass


class UnseenEntityError(DataError):
    def __init__(self, field_name: str, value):
        super().__init__(f"unseen entity {value!r} in field {field_name!r}")
        self.field = field_name
        self.value = value


class InsufficientAnomaliesError(DataError):
    pass


# --------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class CategoricalField:
    name: str
    values: tuple[str, ...]

    @property
    def arity(self) -> int:
        return len(self.values)

    @cached_property
    def index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.values)}


@dataclass(frozen=True)
class ContinuousField:
    name: str
    min: float | None = None
    max: float | None = None


@dataclass(frozen=True)
class Schema:
    categorical: tuple[CategoricalField, ...]
    continuous: tuple[ContinuousField, ...]

    def __post_init__(self):
        names = [f.name for f in self.categorical] + [f.name for f in self.continuous]
        if len(set(names)) != len(names):
            raise DataError("field names must be unique")
        for f in self.categorical:
            if f.arity < 1:
                raise DataError(f"categorical field {f.name!r} has no values")
        for f in self.continuous:
            if f.min is not None and f.max is not None and f.min > f.max:
                raise DataError(f"continuous field {f.name!r} has min > max")

    @property
    def k(self) -> int:
        return len(self.categorical)

    @property
    def r(self) -> int:
        return len(self.continuous)

    @property
    def arities(self) -> list[int]:
        return [f.arity for f in self.categorical]

    @property
    def fitted(self) -> bool:
        return all(f.min is not None and f.max is not None for f in self.continuous)

    @property
    def mins(self) -> np.ndarray:
        return np.array([f.min for f in self.continuous], dtype=np.float64)

    @property
    def maxs(self) -> np.ndarray:
        return np.array([f.max for f in self.continuous], dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "categorical": [{"name": f.name, "values": list(f.values)} for f in self.categorical],
            "continuous": [{"name": f.name, "min": f.min, "max": f.max} for f in self.continuous],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> Schema:
        return cls(
            tuple(CategoricalField(c["name"], tuple(c["values"])) for c in d["categorical"]),
            tuple(ContinuousField(c["name"], c["min"], c["max"]) for c in d["continuous"]),
        )

    def fingerprint(self) -> str:
        # float.hex keeps the bounds exact
        d = self.to_dict()
        for c in d["continuous"]:
            c["min"] = None if c["min"] is None else float(c["min"]).hex()
            c["max"] = None if c["max"] is None else float(c["max"]).hex()
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def summary(self) -> str:
        return f"k={self.k} (sum of arities {sum(self.arities)}), r={self.r}"


@dataclass
class SchemaDecl:
    """What the user declares up front: which columns are which kind."""
    categorical: list[str]
    continuous: list[str]
    label: str | None = None
    normal_values: list[str] = field(default_factory=list)
    frequency_floor: int = 0

    @property
    def columns(self) -> list[str]:
        cols = self.categorical + self.continuous
        return cols + [self.label] if self.label else cols


def _split_list(s: str) -> list[str]:
    return [t.strip() for t in s.replace("\n", ",").split(",") if t.strip()]


def read_decl(path: str | Path) -> SchemaDecl:
    """Parse a schema declaration file.

    Example::

        [schema]
        format = chad-schema-1
        categorical = protocol_type, service, flag
        continuous = duration, src_bytes
        label = label
        normal_values = normal.
        frequency_floor = 0
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",))
    if not cp.read(path):
        raise DataError(f"cannot read schema declaration {path}")
    if "schema" not in cp:
        raise DataError("schema declaration needs a [schema] section")
    s = cp["schema"]
    known = {"format", "categorical", "continuous", "label", "normal_values", "frequency_floor"}
    unknown = set(s) - known
    if unknown:
        raise DataError(f"unknown schema keys: {sorted(unknown)}")
    fmt = s.get("format", SCHEMA_DECL_FORMAT)
    if fmt != SCHEMA_DECL_FORMAT:
        raise DataError(f"unsupported schema format {fmt!r}")
    return SchemaDecl(
        categorical=_split_list(s.get("categorical", "")),
        continuous=_split_list(s.get("continuous", "")),
        label=s.get("label") or None,
        normal_values=_split_list(s.get("normal_values", "")),
        frequency_floor=s.getint("frequency_floor", 0),
    )


def write_decl(decl: SchemaDecl, path: str | Path) -> None:
    cp = configparser.ConfigParser()
    cp["schema"] = {
        "format": SCHEMA_DECL_FORMAT,
        "categorical": ", ".join(decl.categorical),
        "continuous": ", ".join(decl.continuous),
        "frequency_floor": str(decl.frequency_floor),
    }
    if decl.label:
        cp["schema"]["label"] = decl.label
        cp["schema"]["normal_values"] = ", ".join(decl.normal_values)
    with open(path, "w") as fh:
        cp.write(fh)


# --------------------------------------------------------------------------
# records


@dataclass
class EncodedRecord:
    cat: np.ndarray
    cont: np.ndarray


@dataclass
class Dataset:
    """Encoded records stored column-stacked: ``cat`` is (n, k) int, ``cont`` is (n, r) float.

    ``labels`` (1 = anomaly) is only present for evaluation sets.
    """
    schema: Schema
    cat: np.ndarray
    cont: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        n = self.cat.shape[0]
        if self.cat.shape != (n, self.schema.k) or self.cont.shape != (n, self.schema.r):
            raise DataError("record arrays do not match schema")
        if self.labels is not None and self.labels.shape != (n,):
            raise DataError("labels length mismatch")
        ar = np.asarray(self.schema.arities)
        if n and self.schema.k and (np.any(self.cat < 0) or np.any(self.cat >= ar)):
            raise DataError("categorical index out of range")

    def __len__(self) -> int:
        return self.cat.shape[0]

    def record(self, i: int) -> EncodedRecord:
        return EncodedRecord(self.cat[i].copy(), self.cont[i].copy())

    def subset(self, idx) -> Dataset:
        return Dataset(self.schema, self.cat[idx], self.cont[idx],
                       None if self.labels is None else self.labels[idx])

    def unlabeled(self) -> Dataset:
        return Dataset(self.schema, self.cat, self.cont)


@dataclass
class LoadReport:
    rows_read: int = 0
    missing_dropped: int = 0
    floor_dropped: int = 0
    unseen_dropped: int = 0


# --------------------------------------------------------------------------
# reading and fitting


def read_table(path: str | Path, decl: SchemaDecl) -> tuple[pd.DataFrame, LoadReport]:
    """Read a headed CSV, keep declared columns, drop rows with missing values."""
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""])
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read {path}: {e}") from e
    features = decl.categorical + decl.continuous
    missing = [c for c in features if c not in df.columns]
    if missing:
        raise DataError(f"header of {path} lacks declared columns {missing}")
    # the label column is optional here; it is only needed when labels are requested
    df = df[[c for c in decl.columns if c in df.columns]]
    report = LoadReport(rows_read=len(df))
    for c in decl.continuous:
        df[c] = pd.to_numeric(df[c], errors="coerce")
    mask = df.notna().all(axis=1)
    report.missing_dropped = int((~mask).sum())
    if report.missing_dropped:
        log.info("dropped %d rows with missing values from %s", report.missing_dropped, path)
    return df[mask].reset_index(drop=True), report


def apply_frequency_floor(df: pd.DataFrame, columns: Sequence[str], floor: int) -> tuple[pd.DataFrame, int]:
    """Drop rows holding a categorical value seen fewer than ``floor`` times."""
    if floor <= 0:
        return df, 0
    keep = np.ones(len(df), dtype=bool)
    for c in columns:
        counts = df[c].map(df[c].value_counts())
        keep &= (counts >= floor).to_numpy()
    return df[keep].reset_index(drop=True), int((~keep).sum())


def fit_normalizer(raw_cont: np.ndarray, schema: Schema) -> Schema:
    """Store per-field min/max observed in the (raw, unscaled) training values."""
    raw_cont = np.asarray(raw_cont, dtype=np.float64).reshape(-1, schema.r)
    if raw_cont.shape[0] < 1:
        raise DataError("need at least one record to fit the normalizer")
    lo, hi = raw_cont.min(axis=0), raw_cont.max(axis=0)
    cont = tuple(ContinuousField(f.name, float(a), float(b))
                 for f, a, b in zip(schema.continuous, lo, hi))
    return Schema(schema.categorical, cont)


def normalize(raw_cont: np.ndarray, schema: Schema, clamp: bool = True) -> np.ndarray:
    if not schema.fitted:
        raise DataError("schema has no normalization bounds")
    raw_cont = np.asarray(raw_cont, dtype=np.float64)
    lo, hi = schema.mins, schema.maxs
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (raw_cont - lo) / safe, 0.0)
    return np.clip(out, 0.0, 1.0) if clamp else out


def fit_schema(df: pd.DataFrame, decl: SchemaDecl) -> Schema:
    """Build value->index maps (sorted, for determinism) and min/max bounds from training rows."""
    if len(df) == 0:
        raise DataError("no rows to fit a schema on")
    cats = tuple(CategoricalField(c, tuple(sorted(df[c].astype(str).unique()))) for c in decl.categorical)
    bare = Schema(cats, tuple(ContinuousField(c) for c in decl.continuous))
    return fit_normalizer(df[decl.continuous].to_numpy(dtype=np.float64), bare)


def encode_frame(df: pd.DataFrame, schema: Schema, labels: np.ndarray | None = None,
                 clamp: bool = True) -> tuple[Dataset, np.ndarray]:
    """Encode rows with a fitted schema.

    Rows containing entities absent from the schema are rejected; returns the
    dataset of surviving rows and a boolean mask of rejected input rows.
    """
    n = len(df)
    cat = np.zeros((n, schema.k), dtype=np.int64)
    ok = np.ones(n, dtype=bool)
    for j, f in enumerate(schema.categorical):
        idx = df[f.name].astype(str).map(f.index)
        seen = idx.notna().to_numpy()
        ok &= seen
        cat[seen, j] = idx[seen].astype(np.int64).to_numpy()
    names = [f.name for f in schema.continuous]
    cont = normalize(df[names].to_numpy(dtype=np.float64), schema, clamp=clamp) if names \
        else np.zeros((n, 0))
    rejected = ~ok
    if rejected.any():
        log.warning("rejected %d rows with unseen entities", int(rejected.sum()))
    lab = None if labels is None else np.asarray(labels)[ok]
    return Dataset(schema, cat[ok], cont[ok], lab), rejected


def encode_for_test(raw: Mapping, schema: Schema) -> EncodedRecord:
    """Encode one raw record (field name -> value); unseen entities raise."""
    cat = np.empty(schema.k, dtype=np.int64)
    for j, f in enumerate(schema.categorical):
        v = str(raw[f.name])
        if v not in f.index:
            raise UnseenEntityError(f.name, v)
        cat[j] = f.index[v]
    vals = np.array([float(raw[f.name]) for f in schema.continuous], dtype=np.float64)
    return EncodedRecord(cat, normalize(vals[None, :], schema)[0] if schema.r else vals)


def decode(ds: Dataset) -> pd.DataFrame:
    """Map indices back to entity values and undo the 0-1 scaling."""
    s = ds.schema
    cols = {}
    for j, f in enumerate(s.categorical):
        cols[f.name] = np.asarray(f.values, dtype=object)[ds.cat[:, j]]
    if s.r:
        raw = s.mins + ds.cont * (s.maxs - s.mins)
        for j, f in enumerate(s.continuous):
            cols[f.name] = raw[:, j]
    return pd.DataFrame(cols)


def label_flags(df: pd.DataFrame, decl: SchemaDecl) -> np.ndarray:
    if not decl.label:
        raise DataError("declaration has no label column")
    if decl.label not in df.columns:
        raise DataError(f"label column {decl.label!r} not present")
    return (~df[decl.label].astype(str).isin(decl.normal_values)).to_numpy().astype(np.int8)


def load_csv(path: str | Path, decl: SchemaDecl, schema: Schema | None = None,
             with_labels: bool = False) -> tuple[Dataset, LoadReport]:
    """Load and encode a CSV.

    Without ``schema`` the file is treated as training data: the frequency
    floor is applied and a schema is fitted. With a fitted ``schema`` rows are
    encoded for testing and rows with unseen entities are dropped.
    """
    df, report = read_table(path, decl)
    if schema is None:
        df, report.floor_dropped = apply_frequency_floor(df, decl.categorical, decl.frequency_floor)
        if len(df) == 0:
            raise DataError(f"no rows of {path} survived preprocessing")
        schema = fit_schema(df, decl)
    labels = label_flags(df, decl) if with_labels else None
    ds, rejected = encode_frame(df, schema, labels)
    report.unseen_dropped = int(rejected.sum())
    if len(ds) == 0:
        raise DataError(f"no rows of {path} survived preprocessing")
    return ds, report


# --------------------------------------------------------------------------
# evaluation mixes


def build_eval_mix(normal: Dataset, anomalies: Dataset, ratio: float,
                   rng: np.random.Generator | int) -> Dataset:
    """Normal records plus floor(ratio * |normal|) sampled anomalies, shuffled and labelled."""
    if not 0 < ratio <= 1:
        raise ValueError("anomaly ratio must be in (0, 1]")
    rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    n_anom = int(np.floor(ratio * len(normal) + 1e-9))
    if n_anom > len(anomalies):
        raise InsufficientAnomaliesError(
            f"need {n_anom} anomalies for ratio {ratio}, pool has {len(anomalies)}")
    pick = rng.choice(len(anomalies), size=n_anom, replace=False)
    cat = np.concatenate([normal.cat, anomalies.cat[pick]])
    cont = np.concatenate([normal.cont, anomalies.cont[pick]])
    labels = np.concatenate([np.zeros(len(normal), np.int8), np.ones(n_anom, np.int8)])
    order = rng.permutation(len(labels))
    return Dataset(normal.schema, cat[order], cont[order], labels[order])


# --------------------------------------------------------------------------
# cache


def save_dataset(ds: Dataset, path: str | Path) -> None:
    arrays = {"cat": ds.cat, "cont": ds.cont}
    if ds.labels is not None:
        arrays["labels"] = ds.labels
    meta = json.dumps({"format": DATASET_FORMAT, "schema": ds.schema.to_dict()})
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(meta.encode(), dtype=np.uint8), **arrays)


def load_dataset(path: str | Path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if meta.get("format") != DATASET_FORMAT:
            raise DataError(f"unsupported dataset format {meta.get('format')!r}")
        labels = z["labels"] if "labels" in z.files else None
        return Dataset(Schema.from_dict(meta["schema"]), z["cat"], z["cont"], labels)
