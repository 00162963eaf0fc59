"""The CHAD network: field-aware encoder, dense decoder and contrastive estimator head.

Categorical fields enter the encoder either one-hot or through a learned
embedding table; the decoder reconstructs the one-hot/continuous target
through a sigmoid.  The estimator maps a latent vector to the probability
that it came from observed data rather than from the negative sampler.
Lower estimator scores mean more anomalous records.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, Schema
from .nn import MLP, ShapeError, glorot_uniform, mse_loss

MODEL_MAGIC = b"CHADMODL"
MODEL_VERSION = 1
LOG_CLAMP = 1e-7


class ModelFormatError(ValueError):
    pass


class SchemaMismatchError(ValueError):
    pass


class TrainingError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    widths: tuple[int, ...] = (64, 32, 16)
    ae_dropout: float = 0.2
    est_dropout: float = 0.1
    embed_threshold: int = 8
    embed_max_dim: int = 16
    cont_threshold: int = 32
    cont_dim: int = 32
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or min(self.widths) < 1:
            raise ValueError("encoder widths must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def embed_dim(self, arity: int) -> int | None:
        """Embedding width for a field, or None for one-hot input."""
        if arity <= self.embed_threshold:
            return None
        return min(self.embed_max_dim, math.ceil(math.sqrt(arity)))


@dataclass
class FieldTransform:
    arity: int
    table: np.ndarray | None = None

    @property
    def kind(self) -> str:
        return "onehot" if self.table is None else "embedding"

    @property
    def out_dim(self) -> int:
        return self.arity if self.table is None else self.table.shape[1]


@dataclass
class ContinuousTransform:
    r: int
    matrix: np.ndarray | None = None

    @property
    def kind(self) -> str:
        return "identity" if self.matrix is None else "linear"

    @property
    def out_dim(self) -> int:
        return self.r if self.matrix is None else self.matrix.shape[1]


def one_hot(cat: np.ndarray, arities, dtype=np.float64) -> np.ndarray:
    """Concatenated one-hot blocks, one per categorical field."""
    n = cat.shape[0]
    out = np.zeros((n, int(sum(arities))), dtype=dtype)
    offset = 0
    rows = np.arange(n)
    for j, a in enumerate(arities):
        out[rows, offset + cat[:, j]] = 1.0
        offset += a
    return out


def estimation_loss(pos: np.ndarray, neg: np.ndarray, gamma: float = 1.0
                    ) -> tuple[float, np.ndarray, np.ndarray]:
    """Contrastive loss over a batch and its gradients w.r.t. the scores.

    ``pos`` holds f(x_e) per instance (n,), ``neg`` the scores of the K
    negatives of each instance (n, K).  Log arguments are clamped to
    [1e-7, 1 - 1e-7]; the gradient is zero where a clamp is active.
    """
    if neg.ndim != 2 or neg.shape[0] != pos.shape[0] or neg.shape[1] < 1:
        raise ShapeError("negative scores must be (n, K) with K >= 1")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise TrainingError("non-finite estimator scores")
    K = neg.shape[1]
    p = np.clip(pos, LOG_CLAMP, 1 - LOG_CLAMP)
    q = np.clip(1.0 - neg.mean(axis=1), LOG_CLAMP, 1 - LOG_CLAMP)
    loss = -gamma * np.sum(np.log(p)) - np.sum(np.log(q))
    p_live = (pos > LOG_CLAMP) & (pos < 1 - LOG_CLAMP)
    q_raw = 1.0 - neg.mean(axis=1)
    q_live = (q_raw > LOG_CLAMP) & (q_raw < 1 - LOG_CLAMP)
    d_pos = np.where(p_live, -gamma / p, 0.0)
    d_neg = np.where(q_live, 1.0 / q, 0.0)[:, None] / K * np.ones_like(neg)
    return float(loss), d_pos, d_neg


def reconstruction_loss(target: np.ndarray, x_hat: np.ndarray) -> tuple[float, np.ndarray]:
    return mse_loss(target, x_hat)


class ChadModel:
    def __init__(self, schema: Schema, arch: ArchConfig = ArchConfig(),
                 rng: np.random.Generator | None = None):
        if schema.k + schema.r == 0:
            raise ValueError("schema has no fields")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.schema = schema
        self.arch = arch
        dt = np.dtype(arch.dtype)
        self.dtype = dt

        self.fields: list[FieldTransform] = []
        for a in schema.arities:
            d = arch.embed_dim(a)
            self.fields.append(FieldTransform(a, None if d is None else glorot_uniform(a, d, rng, dt)))
        r = schema.r
        self.cont = ContinuousTransform(
            r, glorot_uniform(r, arch.cont_dim, rng, dt) if r > arch.cont_threshold else None)

        in_dim = sum(f.out_dim for f in self.fields) + self.cont.out_dim
        enc_w = (in_dim,) + arch.widths
        self.encoder = MLP(enc_w, ["tanh"] * len(arch.widths), arch.ae_dropout, rng, dt)
        dec_w = tuple(reversed(arch.widths)) + (self.target_dim,)
        self.decoder = MLP(dec_w, ["tanh"] * (len(arch.widths) - 1) + ["sigmoid"],
                           arch.ae_dropout, rng, dt)
        p = self.latent_dim
        self.estimator = MLP((p, math.ceil(p / 2), 1), ["tanh", "sigmoid"], arch.est_dropout, rng, dt)
        self._cached_cat: np.ndarray | None = None
        self._cached_cont: np.ndarray | None = None

    # -- shapes --------------------------------------------------------------

    @property
    def latent_dim(self) -> int:
        return self.arch.widths[-1]

    @property
    def input_dim(self) -> int:
        return self.encoder.layers[0].in_dim

    @property
    def target_dim(self) -> int:
        return sum(self.schema.arities) + self.schema.r

    @property
    def estimator_shape(self) -> tuple[int, ...]:
        return (self.latent_dim,) + tuple(layer.out_dim for layer in self.estimator.layers)

    # -- parameters ----------------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        """All parameter arrays, by name, in the fixed serialization order."""
        out: dict[str, np.ndarray] = {}
        for j, f in enumerate(self.fields):
            if f.table is not None:
                out[f"embed.{j}"] = f.table
        if self.cont.matrix is not None:
            out["cont"] = self.cont.matrix
        for prefix, net in (("enc", self.encoder), ("dec", self.decoder), ("est", self.estimator)):
            for k, v in net.params().items():
                out[f"{prefix}.{k}"] = v
        return out

    def autoencoder_param_names(self) -> list[str]:
        return [k for k in self.params() if not k.startswith("est.")]

    def estimator_param_names(self) -> list[str]:
        return [k for k in self.params() if k.startswith("est.")]

    def n_params(self) -> int:
        return sum(v.size for v in self.params().values())

    def descriptor(self) -> dict:
        return {
            "arch": {**asdict(self.arch), "widths": list(self.arch.widths)},
            "field_transforms": [f.kind for f in self.fields],
            "cont_transform": self.cont.kind,
            "input_dim": self.input_dim,
            "latent_dim": self.latent_dim,
            "estimator": list(self.estimator_shape),
        }

    # -- forward pieces ------------------------------------------------------

    def _check(self, cat: np.ndarray, cont: np.ndarray) -> None:
        if cat.ndim != 2 or cat.shape[1] != self.schema.k or cont.shape != (cat.shape[0], self.schema.r):
            raise ShapeError("batch does not match schema")
        if self.schema.k and cat.size:
            ar = np.asarray(self.schema.arities)
            if np.any(cat < 0) or np.any(cat >= ar):
                raise IndexError("categorical index outside field arity")

    def transform_input(self, cat: np.ndarray, cont: np.ndarray, cache: bool = True) -> np.ndarray:
        """Concatenate per-field transforms of the categoricals with the continuous transform."""
        self._check(cat, cont)
        n = cat.shape[0]
        parts = []
        rows = np.arange(n)
        for j, f in enumerate(self.fields):
            if f.table is None:
                block = np.zeros((n, f.arity), dtype=self.dtype)
                block[rows, cat[:, j]] = 1.0
            else:
                block = f.table[cat[:, j]]
            parts.append(block)
        c = cont.astype(self.dtype, copy=False)
        parts.append(c if self.cont.matrix is None else c @ self.cont.matrix)
        if cache:
            self._cached_cat, self._cached_cont = cat, c
        return np.concatenate(parts, axis=1)

    def _transform_backward(self, grad: np.ndarray) -> dict[str, np.ndarray]:
        cat, cont = self._cached_cat, self._cached_cont
        grads = {}
        offset = 0
        for j, f in enumerate(self.fields):
            d = f.out_dim
            if f.table is not None:
                g = np.zeros_like(f.table)
                np.add.at(g, cat[:, j], grad[:, offset:offset + d])
                grads[f"embed.{j}"] = g
            offset += d
        if self.cont.matrix is not None:
            grads["cont"] = cont.T @ grad[:, offset:]
        return grads

    def target(self, cat: np.ndarray, cont: np.ndarray) -> np.ndarray:
        """Reconstruction target: one-hot categoricals followed by the continuous values."""
        return np.concatenate([one_hot(cat, self.schema.arities, self.dtype),
                               cont.astype(self.dtype, copy=False)], axis=1)

    def encode(self, cat, cont, training: bool = False, rng=None, cache: bool = False) -> np.ndarray:
        return self.encoder.forward(self.transform_input(cat, cont, cache), training, rng, cache)

    def autoencode(self, cat, cont, training: bool = False, rng=None) -> tuple[np.ndarray, np.ndarray]:
        z = self.encode(cat, cont, training, rng)
        return self.decoder.forward(z, training, rng, cache=False), z

    def estimate(self, z: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError(f"latent batch must have {self.latent_dim} columns")
        return self.estimator.forward(z, training, rng, cache=False)[:, 0]

    # -- scoring -------------------------------------------------------------

    def anomaly_score(self, data: Dataset | tuple[np.ndarray, np.ndarray],
                      chunk: int = 8192) -> np.ndarray:
        """Estimator output per record; lower means more anomalous. No noise, no dropout."""
        cat, cont = (data.cat, data.cont) if isinstance(data, Dataset) else data
        out = [self.estimate(self.encode(cat[i:i + chunk], cont[i:i + chunk]))
               for i in range(0, cat.shape[0], chunk)]
        return np.concatenate(out) if out else np.zeros(0)

    def reconstruction_score(self, data: Dataset | tuple[np.ndarray, np.ndarray],
                             chunk: int = 8192) -> np.ndarray:
        """Per-record squared reconstruction error; higher means more anomalous."""
        cat, cont = (data.cat, data.cont) if isinstance(data, Dataset) else data
        out = []
        for i in range(0, cat.shape[0], chunk):
            c, v = cat[i:i + chunk], cont[i:i + chunk]
            x_hat, _ = self.autoencode(c, v)
            out.append(np.sum((self.target(c, v) - x_hat) ** 2, axis=1))
        return np.concatenate(out) if out else np.zeros(0)

    # -- training objective --------------------------------------------------

    def loss_and_grads(self, cat, cont, neg_cat=None, neg_cont=None, *,
                       rec_weight: float = 1.0, use_est: bool = False, gamma: float = 1.0,
                       train_autoencoder: bool = True, training: bool = True,
                       dropout_rng: np.random.Generator | None = None,
                       noise_rng: np.random.Generator | None = None,
                       latent_noise: bool = True, noise: np.ndarray | None = None,
                       ) -> tuple[dict[str, float], dict[str, np.ndarray]]:
        """Weighted objective ``rec_weight * L_R + [use_est] * L_est`` and its gradients.

        Negatives of instance ``i`` are rows ``[i*K, (i+1)*K)`` of ``neg_cat``/``neg_cont``.
        Latent noise is either passed explicitly (``noise``) or drawn from
        ``noise_rng``.  With ``train_autoencoder=False`` the encoder runs
        deterministically and only estimator gradients are returned.
        """
        n = cat.shape[0]
        use_rec = rec_weight != 0.0 and train_autoencoder
        if not use_rec and not use_est:
            raise ValueError("objective has no active term")
        if use_est:
            if neg_cat is None or neg_cat.shape[0] % n:
                raise ShapeError("need K negatives per instance")
            K = neg_cat.shape[0] // n
            all_cat = np.concatenate([cat, neg_cat])
            all_cont = np.concatenate([cont.astype(self.dtype, copy=False),
                                       neg_cont.astype(self.dtype, copy=False)])
        else:
            all_cat, all_cont = cat, cont

        enc_training = training and train_autoencoder
        z = self.encoder.forward(self.transform_input(all_cat, all_cont, train_autoencoder),
                                 enc_training, dropout_rng, cache=train_autoencoder)
        dz = np.zeros_like(z) if train_autoencoder else None
        losses: dict[str, float] = {}
        grads: dict[str, np.ndarray] = {}

        if use_rec:
            x_hat = self.decoder.forward(z[:n], training, dropout_rng)
            l_r, g = reconstruction_loss(self.target(cat, cont), x_hat)
            losses["rec"] = l_r
            g_z, g_dec = self.decoder.backward(rec_weight * g)
            dz[:n] += g_z
            grads.update({f"dec.{k}": v for k, v in g_dec.items()})

        if use_est:
            z_neg = z[n:]
            if noise is not None:
                z_neg = z_neg + noise
            elif latent_noise:
                if noise_rng is None:
                    raise ValueError("latent noise needs noise_rng")
                z_neg = z_neg + noise_rng.standard_normal(z_neg.shape).astype(self.dtype, copy=False)
            s = self.estimator.forward(np.concatenate([z[:n], z_neg]), training, dropout_rng)[:, 0]
            l_e, d_pos, d_neg = estimation_loss(s[:n], s[n:].reshape(n, K), gamma)
            losses["est"] = l_e
            g_z, g_est = self.estimator.backward(np.concatenate([d_pos, d_neg.ravel()])[:, None])
            grads.update({f"est.{k}": v for k, v in g_est.items()})
            if train_autoencoder:
                dz += g_z  # additive noise passes the gradient through unchanged

        losses["total"] = rec_weight * losses.get("rec", 0.0) + losses.get("est", 0.0)
        if not np.isfinite(losses["total"]):
            raise TrainingError(f"non-finite loss {losses}")
        if train_autoencoder:
            g_in, g_enc = self.encoder.backward(dz)
            grads.update({f"enc.{k}": v for k, v in g_enc.items()})
            grads.update(self._transform_backward(g_in))
        return losses, grads


def build_model(schema: Schema, arch: ArchConfig = ArchConfig(),
                rng: np.random.Generator | None = None) -> ChadModel:
    return ChadModel(schema, arch, rng)


# ---------------------------------------------------------------------------
# model file
#
#   magic (8 bytes) | version (u32) | header length (u32) | header (utf-8 json)
#   | parameter blocks in header order, float64 little-endian


def model_bytes(model: ChadModel) -> bytes:
    params = model.params()
    header = {
        "schema": model.schema.to_dict(),
        "schema_fingerprint": model.schema.fingerprint(),
        "descriptor": model.descriptor(),
        "params": [[k, list(v.shape)] for k, v in params.items()],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<II", MODEL_VERSION, len(hb)))
    buf.write(hb)
    for v in params.values():
        buf.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return buf.getvalue()


def save_model(model: ChadModel, path: str | Path) -> None:
    Path(path).write_bytes(model_bytes(model))


def load_model(path: str | Path, schema: Schema | None = None) -> ChadModel:
    """Read a model file; with ``schema`` given, its fingerprint must match the file's."""
    blob = Path(path).read_bytes()
    head = len(MODEL_MAGIC) + 8
    if len(blob) < head or blob[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError(f"{path} is not a CHAD model file")
    version, hlen = struct.unpack("<II", blob[len(MODEL_MAGIC):head])
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    if len(blob) < head + hlen:
        raise ModelFormatError("truncated model header")
    try:
        header = json.loads(blob[head:head + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"corrupt model header: {e}") from e
    file_schema = Schema.from_dict(header["schema"])
    if file_schema.fingerprint() != header["schema_fingerprint"]:
        raise ModelFormatError("embedded schema does not match its fingerprint")
    if schema is not None and schema.fingerprint() != header["schema_fingerprint"]:
        raise SchemaMismatchError("model was trained on a different schema")
    a = header["descriptor"]["arch"]
    arch = ArchConfig(**{**a, "widths": tuple(a["widths"])})
    model = ChadModel(file_schema, arch)
    params = model.params()
    expected = [[k, list(v.shape)] for k, v in params.items()]
    if expected != header["params"]:
        raise ModelFormatError("parameter layout does not match architecture")
    pos = head + hlen
    need = pos + 8 * sum(v.size for v in params.values())
    if len(blob) != need:
        raise ModelFormatError(f"model file has {len(blob)} bytes, expected {need}")
    for v in params.values():
        nbytes = 8 * v.size
        v[...] = np.frombuffer(blob, dtype="<f8", count=v.size, offset=pos).reshape(v.shape)
        pos += nbytes
    return model
