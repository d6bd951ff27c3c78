"""Latent autoencoder. The encoder maps flat examples to a small latent
vector (the space the latent-mode diffusion model lives in) and doubles as
the feature extractor for the distributional metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TrainingDivergedError
from .nets import Adam, Mlp
from .tensor import (
    Float,
    GradientTape,
    RngStream,
    Tensor,
    mean_all,
    reshape,
    tile_rows,
)


class LatentCodec:
    """MLP encoder/decoder pair with two tanh hidden layers per side."""

    def __init__(self, input_dim: int, latent_dim: int, rng: RngStream,
                 hidden: int = 64):
        self.input_dim = int(input_dim)
        self.latent_dim = int(latent_dim)
        self.hidden = int(hidden)
        self.enc = Mlp([input_dim, hidden, hidden, latent_dim], rng.child("enc"))
        self.dec = Mlp([latent_dim, hidden, hidden, input_dim], rng.child("dec"))

    def encode(self, x: Tensor) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        squeeze = x.data.ndim == 1
        z = self.enc(tile_rows(x, 1) if squeeze else x)
        return reshape(z, (self.latent_dim,)) if squeeze else z

    def decode(self, z: Tensor) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(z)
        squeeze = z.data.ndim == 1
        x = self.dec(tile_rows(z, 1) if squeeze else z)
        return reshape(x, (self.input_dim,)) if squeeze else x

    @property
    def params(self) -> list[Tensor]:
        return self.enc.params + self.dec.params

    def set_params(self, params: list[Tensor]):
        n = len(self.enc.params)
        self.enc.set_params(params[:n])
        self.dec.set_params(params[n:])

    def watch(self, tape: GradientTape):
        tape.watch(*self.params)


@dataclass
class CodecTrainConfig:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 2e-3
    val_fraction: float = 0.1
    recon_threshold: float | None = 0.02
    standardize: bool = True


def reconstruction_mse(codec: LatentCodec, data: np.ndarray) -> float:
    """Mean squared per-element reconstruction error."""
    x = Tensor(np.asarray(data, dtype=Float))
    xh = codec.decode(codec.encode(x))
    return float(((xh.data - x.data) ** 2).mean())


def _standardize_latents(codec: LatentCodec, data: np.ndarray):
    """Fold latent mean/std into the boundary affine layers so encoder
    outputs are standardized over the training data. Reconstructions are
    unchanged (exact up to float32 rounding)."""
    z = codec.encode(Tensor(data)).data.astype(np.float64)
    mu = z.mean(axis=0)
    sd = z.std(axis=0) + 1e-6
    we, be = codec.enc.weights[-1], codec.enc.biases[-1]
    codec.enc.weights[-1] = Tensor(we.data.astype(np.float64) / sd[None, :])
    codec.enc.biases[-1] = Tensor((be.data.astype(np.float64) - mu) / sd)
    wd, bd = codec.dec.weights[0], codec.dec.biases[0]
    codec.dec.weights[0] = Tensor(sd[:, None] * wd.data.astype(np.float64))
    codec.dec.biases[0] = Tensor(bd.data.astype(np.float64)
                                 + mu @ wd.data.astype(np.float64))


def train_codec(codec: LatentCodec, data, cfg: CodecTrainConfig,
                rng: RngStream) -> np.ndarray:
    """Train the autoencoder on flat examples; returns the loss curve.

    Holds out a validation split and raises TrainingDivergedError if its
    reconstruction MSE ends above the configured threshold.
    """
    data = np.asarray(data, dtype=Float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ConfigError("training data must be a non-empty [N, D] array")
    if data.shape[1] != codec.input_dim:
        raise ConfigError(
            f"data dim {data.shape[1]} != codec input dim {codec.input_dim}"
        )
    n = data.shape[0]
    n_val = int(round(cfg.val_fraction * n))
    perm = rng.child("split").shuffled(n)
    val = data[perm[:n_val]]
    train = data[perm[n_val:]]
    if train.shape[0] == 0:
        raise ConfigError("validation split left no training rows")

    bs = min(cfg.batch_size, train.shape[0])
    opt = Adam(len(codec.params), cfg.lr)
    curve = np.zeros(cfg.steps, dtype=np.float64)
    for step in range(cfg.steps):
        idx = rng.integers(0, train.shape[0], (bs,))
        x = Tensor(train[idx])
        with GradientTape() as tape:
            codec.watch(tape)
            xh = codec.decode(codec.encode(x))
            diff = xh - x
            loss = mean_all(diff * diff)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss at step {step}")
        curve[step] = value
        grads = tape.gradient(loss, codec.params)
        codec.set_params(opt.step(codec.params, grads))

    if cfg.standardize:
        _standardize_latents(codec, train)
    if cfg.recon_threshold is not None:
        check = val if n_val > 0 else train
        mse = reconstruction_mse(codec, check)
        if mse > cfg.recon_threshold:
            raise TrainingDivergedError(
                f"validation reconstruction MSE {mse:.5f} above threshold "
                f"{cfg.recon_threshold}"
            )
    return curve
