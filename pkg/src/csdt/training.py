"""Training harness: curriculum over undersampling factors, MSE loss,
Adam with a stepped fine-tuning schedule, stochastic subnetwork dropping,
validation tracking and best-checkpoint retention.

Every source of randomness (sample order, per-sample masks, drop
decisions, frozen validation masks) is derived from the config seed, so a
run is a pure function of (model, data, config).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, mse_loss, no_grad
from .cascade import save_model
from .kspace import undersample, zero_filled, to_channels, magnitude
from .masks import MaskSpec, generate_mask
from .metrics import psnr
from .optim import Adam, NonFiniteGradientError


class NonFiniteLossError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, epoch, batch, detail="non-finite loss"):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{detail} at epoch {epoch}, batch {batch}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    split_epoch: int = 15          # last epoch of the variable-UF phase
    uf_range: tuple = (1.0, 12.0)  # phase-1 UF drawn uniformly from here
    fine_tune_uf: float = 3.0
    batch_size: int = 4
    base_lr: float = 1e-3
    lr_decay: float = 0.1
    lr_period: int = 20
    seed: int = 0
    stochastic: bool = False
    checkpoint_every: int = 0      # epochs between periodic checkpoints; 0 = off

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.split_epoch <= self.epochs:
            raise ValueError(f"split_epoch must lie in [0, epochs], got {self.split_epoch}")
        lo, hi = self.uf_range
        if not 1.0 <= lo <= hi:
            raise ValueError(f"uf_range must satisfy 1 <= lo <= hi, got {self.uf_range}")
        if self.fine_tune_uf < 1.0:
            raise ValueError(f"fine_tune_uf must be >= 1, got {self.fine_tune_uf}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr < 0:
            raise ValueError(f"base_lr must be >= 0, got {self.base_lr}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.lr_period < 1:
            raise ValueError(f"lr_period must be >= 1, got {self.lr_period}")
        object.__setattr__(self, "uf_range", (float(lo), float(hi)))


def learning_rate(config, epoch):
    """Base LR through the curriculum phase, then stepped decay (1-based epoch)."""
    if epoch <= config.split_epoch:
        return config.base_lr
    steps = (epoch - config.split_epoch) // config.lr_period
    return config.base_lr * config.lr_decay**steps


@dataclass
class TrainLog:
    """One record per epoch; wall time stays in memory and out of the JSONL."""

    records: list = field(default_factory=list)

    def add(self, **kw):
        self.records.append(kw)

    def to_jsonl(self):
        lines = []
        for rec in self.records:
            out = {k: v for k, v in rec.items() if k != "wall_time"}
            lines.append(json.dumps(out, sort_keys=True))
        return "\n".join(lines) + "\n"

    def best_epoch(self):
        return max(self.records, key=lambda r: r["val_psnr"])["epoch"]


def _frames(stacks):
    """All complex frames of a list of DWI stacks as one (F, H, W) array."""
    return np.concatenate([s.frames() for s in stacks], axis=0)


def _prepare_batch(frames, lines, dtype):
    """Measurements, zero-filled init and 2-channel target for a batch."""
    y = undersample(frames, lines)
    x_u = to_channels(zero_filled(y, lines)).astype(dtype)
    target = to_channels(frames).astype(dtype)
    return y, x_u, target


def validate(model, frames, masks):
    """Mean magnitude PSNR over frames, deterministic full-depth passes."""
    scores = []
    with no_grad():
        for frame, mask in zip(frames, masks):
            x = frame[None]
            y, x_u, _ = _prepare_batch(x, mask.lines, model.config.dtype)
            out = model.forward(x_u, y, mask.lines, mode="deterministic", training=False)
            scores.append(psnr(magnitude(out.data)[0], np.abs(frame)))
    return float(np.mean(scores))


def _snapshot(model):
    params = {k: t.data.copy() for k, t in model.params.items()}
    state = {k: v.copy() for k, v in model.bn_state.items()}
    return params, state


def _restore(model, snapshot):
    params, state = snapshot
    for k, t in model.params.items():
        t.data[...] = params[k]
    for k, v in model.bn_state.items():
        v[...] = state[k]


def train(model, data, config, checkpoint_dir=None):
    """Train ``model`` on ``data`` (a phantom Dataset) in place.

    Phase 1 (epochs 1..split_epoch) draws each sample's undersampling
    factor uniformly from uf_range; phase 2 fixes it to fine_tune_uf and
    steps the learning rate down. Every sample gets a freshly seeded mask
    each epoch; validation uses masks frozen at startup. The best
    validation state is restored into the model before returning.
    """
    if not data.train or not data.val:
        raise ValueError("training needs nonempty train and val splits")
    train_frames = _frames(data.train)
    val_frames = _frames(data.val)
    ny = train_frames.shape[-2]
    dtype = model.config.dtype

    root = np.random.SeedSequence(config.seed)
    ss_order, ss_mask, ss_drop, ss_val = root.spawn(4)
    rng_order = np.random.default_rng(ss_order)
    rng_mask = np.random.default_rng(ss_mask)
    rng_drop = np.random.default_rng(ss_drop)
    rng_val = np.random.default_rng(ss_val)

    val_masks = [
        generate_mask(MaskSpec(ny=ny, uf=config.fine_tune_uf,
                               seed=int(rng_val.integers(0, 2**63))))
        for _ in range(len(val_frames))
    ]

    opt = Adam(model.params, lr=config.base_lr)
    log = TrainLog()
    best = (-np.inf, None)
    stochastic = config.stochastic and model.config.stochastic

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        lr = learning_rate(config, epoch)
        opt.lr = lr
        fine_tune = epoch > config.split_epoch

        order = rng_order.permutation(len(train_frames))
        losses = []
        drop_counts = np.zeros(model.config.n_c, dtype=int) if stochastic else None
        n_forwards = 0
        for b0 in range(0, len(order), config.batch_size):
            idx = order[b0:b0 + config.batch_size]
            batch_id = b0 // config.batch_size
            lines = []
            for _ in idx:
                uf = config.fine_tune_uf if fine_tune else rng_mask.uniform(*config.uf_range)
                seed = int(rng_mask.integers(0, 2**63))
                lines.append(generate_mask(MaskSpec(ny=ny, uf=uf, seed=seed)).lines)
            lines = np.stack(lines)

            y, x_u, target = _prepare_batch(train_frames[idx], lines, dtype)
            mode = "stochastic" if stochastic else "deterministic"
            out, drops = model.forward(x_u, y, lines, mode=mode, rng=rng_drop,
                                       training=True, return_drops=True)
            loss = mse_loss(out, Tensor(target))
            if not np.isfinite(loss.data):
                raise NonFiniteLossError(epoch, batch_id)
            opt.zero_grad()
            loss.backward()
            try:
                opt.step()
            except NonFiniteGradientError as err:
                raise NonFiniteLossError(epoch, batch_id, str(err)) from err
            losses.append(float(loss.data))
            if stochastic:
                drop_counts += drops
            n_forwards += 1

        val_psnr = validate(model, val_frames, val_masks)
        if val_psnr > best[0]:
            best = (val_psnr, _snapshot(model))
        log.add(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_psnr=val_psnr,
            lr=lr,
            drop_counts=None if drop_counts is None else drop_counts.tolist(),
            forwards=n_forwards,
            wall_time=time.perf_counter() - t0,
        )
        if checkpoint_dir is not None and config.checkpoint_every > 0 \
                and epoch % config.checkpoint_every == 0:
            save_model(model, f"{checkpoint_dir}/epoch{epoch:03d}.csdt")

    if best[1] is not None:
        _restore(model, best[1])
    if checkpoint_dir is not None:
        save_model(model, f"{checkpoint_dir}/best.csdt")
    return model, log
