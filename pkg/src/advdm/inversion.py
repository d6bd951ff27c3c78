"""Textual-inversion style condition recovery.

Given a small group of images from one style/class, recover a condition
vector S* such that the frozen diffusion model explains the group well
when conditioned on S*. Only the condition vector is optimized; model and
codec parameters stay untouched. Each SGD step uses a small random batch
of group members with fresh per-item (t, eps) draws, so the loss curve is
noisy by design and convergence is judged on a trailing mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import LatentCodec
from .diffusion import (Denoiser, DiffusionSchedule, diffusion_loss_batch,
                        img2img, sample)
from .errors import ConfigError, NumericError
from .tensor import Float, GradientTape, RngStream, Tensor, gaussian


@dataclass
class InversionConfig:
    steps: int = 1000
    lr: float = 0.05
    batch_size: int = 4        # group members per SGD step
    init_noise: float = 0.25   # stddev added to the seed table row

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.lr <= 0.0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.init_noise < 0.0:
            raise ConfigError("init_noise must be >= 0")


@dataclass
class InversionResult:
    embedding: np.ndarray            # [cond_dim] recovered condition
    losses: np.ndarray               # per-step objective values
    init: np.ndarray = field(repr=False, default=None)


def _initial_embedding(model: Denoiser, cfg: InversionConfig,
                       rng: RngStream) -> np.ndarray:
    d = model.cond_dim
    if model.cond_table is not None:
        row = int(rng.integers(0, model.n_classes, (1,))[0])
        base = model.cond_table.data[row].astype(np.float64)
    else:
        base = np.zeros(d, dtype=np.float64)
    return (base + cfg.init_noise * rng.normal((d,))).astype(Float)


def invert(model: Denoiser, sched: DiffusionSchedule,
           codec: LatentCodec | None, group_x, cfg: InversionConfig,
           rng: RngStream) -> InversionResult:
    """Recover a condition vector for a group of same-style images.

    group_x: [G, ...] raw inputs; encoded once up front when a codec is
    given. The table row used for initialization is picked at random, so
    nothing about the true class leaks into the estimate.
    """
    group = np.asarray(group_x, dtype=Float)
    if group.ndim == 1:
        group = group[None, :]
    if group.shape[0] == 0:
        raise ConfigError("inversion needs a non-empty group")
    group = group.reshape(group.shape[0], -1)
    if codec is not None:
        lat = codec.encode(Tensor(group)).data
    else:
        lat = group
    if lat.shape[1] != model.data_dim:
        raise ConfigError(
            f"group feeds dim {lat.shape[1]} but model expects {model.data_dim}"
        )

    s = _initial_embedding(model, cfg, rng)
    init = s.copy()
    bs = min(cfg.batch_size, lat.shape[0])
    losses = np.empty(cfg.steps, dtype=np.float64)
    for step in range(cfg.steps):
        j = rng.integers(0, lat.shape[0], (bs,))
        t_arr = rng.integers(1, sched.T + 1, (bs,))
        eps = gaussian(rng, (bs, lat.shape[1]))
        sv = Tensor(s)
        with GradientTape() as tape:
            tape.watch(sv)
            loss, _ = diffusion_loss_batch(model, sched, Tensor(lat[j]), sv,
                                           t_arr, eps)
        g = tape.gradient(loss, sv).data
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient at inversion step {step}")
        losses[step] = loss.item()
        s = (s - cfg.lr * g).astype(Float)
    return InversionResult(embedding=s, losses=losses, init=init)


def _as_embedding(embedding) -> np.ndarray:
    if isinstance(embedding, Tensor):
        embedding = embedding.data
    return np.asarray(embedding, dtype=Float)


def generate_from_inversion(model: Denoiser, sched: DiffusionSchedule,
                            codec: LatentCodec | None, embedding,
                            count: int, rng: RngStream) -> np.ndarray:
    """Draw fresh samples conditioned on a recovered embedding."""
    c = Tensor(_as_embedding(embedding))
    out = sample(model, sched, c, count, rng).data
    if codec is not None:
        out = np.clip(codec.decode(Tensor(out)).data, 0.0, 1.0)
    return out


def style_transfer(model: Denoiser, sched: DiffusionSchedule,
                   codec: LatentCodec | None, embedding, sources,
                   rng: RngStream, strength: float = 0.5) -> np.ndarray:
    """Re-render source images in the recovered style via partial
    diffusion: push sources to t = strength * T, then denoise back under
    the recovered condition."""
    src = np.asarray(sources, dtype=Float)
    squeeze = src.ndim == 1
    if squeeze:
        src = src[None, :]
    src = src.reshape(src.shape[0], -1)
    if codec is not None:
        z = codec.encode(Tensor(src)).data
    else:
        z = src
    c = Tensor(_as_embedding(embedding))
    out = img2img(model, sched, c, z, strength, rng).data
    if codec is not None:
        out = np.clip(codec.decode(Tensor(out)).data, 0.0, 1.0)
    return out[0] if squeeze else out
