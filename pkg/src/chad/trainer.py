"""Three-phase training schedule.

1. burn-in: autoencoder on reconstruction loss only;
2. joint: reconstruction (weighted by exp(-t)) on every mini-batch, the
   contrastive estimator loss added on every other mini-batch;
3. estimator only, encoder and decoder frozen, with the positive-class
   weight ramped up linearly.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Dataset, Schema
from .model import ChadModel, TrainingError, save_model
from .negsampler import SamplerConfig, perturb_batch
from .nn import Adam

log = logging.getLogger(__name__)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator per named purpose, so streams never perturb each other."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 256
    phase1_epochs: int = 50
    phase2_epochs: int = 10
    phase3_epochs: int = 25
    gamma_max: float = 2.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("learning rate and batch size must be positive")
        if min(self.phase1_epochs, self.phase2_epochs, self.phase3_epochs) < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.gamma_max < 1:
            raise ValueError("gamma_max must be >= 1")


@dataclass(frozen=True)
class EpochPlan:
    phase: int
    epoch_in_phase: int   # 1-based
    lam: float
    gamma: float


def schedule(cfg: TrainConfig) -> list[EpochPlan]:
    """Per-epoch phase, reconstruction weight and positive-class weight."""
    plan = [EpochPlan(1, t, 1.0, 1.0) for t in range(1, cfg.phase1_epochs + 1)]
    plan += [EpochPlan(2, t, math.exp(-t), 1.0) for t in range(1, cfg.phase2_epochs + 1)]
    n3 = cfg.phase3_epochs
    for t in range(1, n3 + 1):
        frac = 1.0 if n3 == 1 else (t - 1) / (n3 - 1)
        plan.append(EpochPlan(3, t, 0.0, 1.0 + (cfg.gamma_max - 1.0) * frac))
    return plan


def indicators(phase: int, batch_index: int) -> tuple[int, int]:
    """(reconstruction on?, estimator on?) for a mini-batch."""
    if phase == 1:
        return 1, 0
    if phase == 2:
        return 1, int(batch_index % 2 == 0)
    return 0, 1


@dataclass
class EpochLog:
    epoch: int
    phase: int
    lam: float
    gamma: float
    n_batches: int
    rec_batches: int
    est_batches: int
    mean_rec_loss: float | None
    mean_est_loss: float | None
    ae_checksum: str
    wall_time: float


@dataclass
class TrainLog:
    epochs: list[EpochLog] = field(default_factory=list)

    def to_jsonl(self, include_time: bool = True) -> str:
        lines = []
        for e in self.epochs:
            d = asdict(e)
            if not include_time:
                d.pop("wall_time")
            lines.append(json.dumps(d, sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())


def param_checksum(model: ChadModel, names) -> str:
    h = hashlib.sha256()
    params = model.params()
    for k in names:
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.hexdigest()


def make_negatives_for_batch(cat: np.ndarray, cont: np.ndarray, schema: Schema,
                             sampler: SamplerConfig, rng: np.random.Generator
                             ) -> tuple[np.ndarray, np.ndarray]:
    """K fresh negatives per instance; the model encodes them and adds latent noise."""
    return perturb_batch(cat, cont, schema, sampler, rng)


def loss_step(model: ChadModel, cat, cont, phase: int, batch_index: int, lam: float, gamma: float,
              sampler: SamplerConfig, streams: dict[str, np.random.Generator]
              ) -> tuple[dict[str, float], dict[str, np.ndarray], tuple[int, int]]:
    """Loss and gradients of one mini-batch; grads cover only trainable parameters."""
    t_r, t_e = indicators(phase, batch_index)
    neg_cat = neg_cont = None
    if t_e:
        neg_cat, neg_cont = make_negatives_for_batch(cat, cont, model.schema, sampler,
                                                     streams["sampler"])
    losses, grads = model.loss_and_grads(
        cat, cont, neg_cat, neg_cont,
        rec_weight=lam * t_r, use_est=bool(t_e), gamma=gamma,
        train_autoencoder=phase != 3, training=True,
        dropout_rng=streams["dropout"], noise_rng=streams["latent"],
        latent_noise=sampler.latent_noise)
    return losses, grads, (t_r, t_e)


def train(model: ChadModel, data: Dataset, cfg: TrainConfig = TrainConfig(),
          sampler: SamplerConfig = SamplerConfig(), checkpoint_dir: str | Path | None = None,
          on_epoch: Callable[[EpochLog], None] | None = None) -> tuple[ChadModel, TrainLog]:
    if len(data) == 0:
        raise ValueError("training set is empty")
    if data.schema.fingerprint() != model.schema.fingerprint():
        raise ValueError("dataset and model schemas differ")
    streams = {name: substream(cfg.seed, name) for name in ("shuffle", "sampler", "dropout", "latent")}
    params = model.params()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    ae_names = model.autoencoder_param_names()
    n = len(data)
    tlog = TrainLog()
    cont = data.cont.astype(model.dtype, copy=False)

    for epoch, plan in enumerate(schedule(cfg), start=1):
        t0 = time.perf_counter()
        order = streams["shuffle"].permutation(n)
        rec, est = [], []
        counts = [0, 0, 0]
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                losses, grads, (t_r, t_e) = loss_step(
                    model, data.cat[idx], cont[idx], plan.phase, b, plan.lam, plan.gamma,
                    sampler, streams)
                opt.step(grads)
            except (TrainingError, FloatingPointError) as e:
                raise TrainingError(f"phase {plan.phase}, epoch {epoch}, batch {b}: {e}") from e
            counts[0] += 1
            counts[1] += t_r
            counts[2] += t_e
            if "rec" in losses:
                rec.append(losses["rec"])
            if "est" in losses:
                est.append(losses["est"])
        entry = EpochLog(
            epoch=epoch, phase=plan.phase, lam=plan.lam, gamma=plan.gamma,
            n_batches=counts[0], rec_batches=counts[1], est_batches=counts[2],
            mean_rec_loss=float(np.mean(rec)) if rec else None,
            mean_est_loss=float(np.mean(est)) if est else None,
            ae_checksum=param_checksum(model, ae_names),
            wall_time=time.perf_counter() - t0)
        tlog.epochs.append(entry)
        log.info("epoch %d phase %d rec=%s est=%s", epoch, plan.phase, entry.mean_rec_loss,
                 entry.mean_est_loss)
        if on_epoch is not None:
            on_epoch(entry)
        if checkpoint_dir is not None and _phase_ends(cfg, epoch):
            save_model(model, Path(checkpoint_dir) / f"phase{plan.phase}.chad")
    return model, tlog


def _phase_ends(cfg: TrainConfig, epoch: int) -> bool:
    ends = {cfg.phase1_epochs, cfg.phase1_epochs + cfg.phase2_epochs,
            cfg.phase1_epochs + cfg.phase2_epochs + cfg.phase3_epochs}
    return epoch in ends
