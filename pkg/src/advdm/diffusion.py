"""Toy DDPM engine: noise schedule, epsilon-prediction denoiser, training,
ancestral sampling, partial-noise img2img, and diffusion purification.

The engine is space-agnostic: the same machinery runs on raw 2-D points,
pixel vectors, or codec latents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, StepRangeError, TrainingDivergedError
from .nets import Adam, Mlp, time_embedding
from .tensor import (
    Float,
    GradientTape,
    RngStream,
    Tensor,
    concat,
    gaussian,
    gather_rows,
    mean_all,
    sub,
    sum_all,
    sum_axis,
    tile_rows,
)


class DiffusionSchedule:
    """Variance schedule: betas, alphas, and their running product alpha_bar.

    Timesteps are 1-based: t ranges over 1..T, matching x_t notation.
    """

    def __init__(self, betas):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ConfigError("betas must be a non-empty vector")
        if betas.min() <= 0.0 or betas.max() >= 1.0:
            raise ConfigError("betas must lie strictly inside (0, 1)")
        self.betas = betas
        self.T = int(betas.size)
        self.alphas = 1.0 - betas
        self.alpha_bar = np.cumprod(self.alphas)
        if not np.all(np.diff(self.alpha_bar) < 0.0):
            raise ConfigError("alpha_bar must be strictly decreasing")

    @classmethod
    def linear(cls, timesteps: int = 100, beta_start: float = 1e-4,
               beta_end: float = 0.02) -> "DiffusionSchedule":
        """Classic linear ramp. At T = 100 it keeps ~37% signal at the
        terminal step, so sampling from pure noise is biased; prefer
        quadratic() when full-noise terminality matters."""
        if timesteps < 1:
            raise ConfigError("need at least one timestep")
        if beta_end < beta_start:
            raise ConfigError("beta_end must be >= beta_start")
        return cls(np.linspace(beta_start, beta_end, timesteps))

    @classmethod
    def quadratic(cls, timesteps: int = 100, beta_start: float = 1e-4,
                  beta_end: float = 0.2) -> "DiffusionSchedule":
        """Ramp linear in sqrt(beta). Front-loads small betas, so early
        steps stay near-lossless (alpha_bar at T/4 ~ 0.91) while the chain
        still ends at alpha_bar ~ 1e-3 for unbiased ancestral sampling."""
        if timesteps < 1:
            raise ConfigError("need at least one timestep")
        if beta_end < beta_start:
            raise ConfigError("beta_end must be >= beta_start")
        root = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), timesteps)
        return cls(root * root)

    def check_step(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise StepRangeError(f"timestep {t} outside 1..{self.T}")
        return t

    def alpha_bar_at(self, t) -> np.ndarray:
        """alpha_bar for 1-based t (scalar or vector)."""
        ts = np.asarray(t, dtype=np.int64)
        if ts.size and (ts.min() < 1 or ts.max() > self.T):
            raise StepRangeError(f"timestep outside 1..{self.T}")
        return self.alpha_bar[ts - 1]


class Denoiser:
    """Epsilon-prediction MLP over [noisy input, time embedding, condition].

    Owns the learned class-condition table; the zero vector is the null
    (unconditional) condition.
    """

    def __init__(self, data_dim: int, rng: RngStream, cond_dim: int = 8,
                 time_dim: int = 16, hidden: int = 128, depth: int = 3,
                 n_classes: int = 0):
        self.data_dim = int(data_dim)
        self.cond_dim = int(cond_dim)
        self.time_dim = int(time_dim)
        self.hidden = int(hidden)
        self.depth = int(depth)
        self.n_classes = int(n_classes)
        dims = [data_dim + time_dim + cond_dim] + [hidden] * depth + [data_dim]
        self.mlp = Mlp(dims, rng.child("mlp"))
        if n_classes > 0:
            self.cond_table = Tensor(
                0.5 * rng.child("cond").normal((n_classes, cond_dim))
            )
        else:
            self.cond_table = None

    # -- parameter plumbing -------------------------------------------------
    @property
    def params(self) -> list[Tensor]:
        ps = self.mlp.params
        if self.cond_table is not None:
            ps = ps + [self.cond_table]
        return ps

    def set_params(self, params: list[Tensor]):
        if self.cond_table is not None:
            self.mlp.set_params(params[:-1])
            self.cond_table = params[-1]
        else:
            self.mlp.set_params(params)

    def watch(self, tape: GradientTape):
        tape.watch(*self.params)

    def null_condition(self) -> Tensor:
        return Tensor(np.zeros(self.cond_dim, dtype=Float))

    def class_embedding(self, k: int) -> Tensor:
        if self.cond_table is None:
            raise ConfigError("model has no class-condition table")
        if not 0 <= k < self.n_classes:
            raise ConfigError(f"class index {k} outside 0..{self.n_classes - 1}")
        return Tensor(self.cond_table.data[k])

    # -- forward ------------------------------------------------------------
    def forward(self, x: Tensor, t, c=None) -> Tensor:
        """Predict the noise component of x at timestep(s) t.

        x: [B, D] or [D]; t: int or [B] ints; c: None (null condition),
        a [cond_dim] vector, or a [B, cond_dim] batch. Output shape equals
        the input shape.
        """
        squeeze = x.data.ndim == 1
        xb = tile_rows(x, 1) if squeeze else x
        if xb.data.shape[1] != self.data_dim:
            raise ShapeError(
                f"input dim {xb.data.shape[1]} != model dim {self.data_dim}"
            )
        n = xb.data.shape[0]
        ts = np.full(n, int(t), dtype=np.int64) if np.ndim(t) == 0 else \
            np.asarray(t, dtype=np.int64)
        temb = Tensor(time_embedding(ts, self.time_dim))
        if c is None:
            cb = Tensor(np.zeros((n, self.cond_dim), dtype=Float))
        else:
            c = c if isinstance(c, Tensor) else Tensor(c)
            cb = tile_rows(c, n) if c.data.ndim == 1 else c
        if cb.data.shape != (n, self.cond_dim):
            raise ShapeError("condition batch shape mismatch")
        out = self.mlp(concat([xb, temb, cb], axis=1))
        if squeeze:
            from .tensor import reshape
            out = reshape(out, (self.data_dim,))
        return out


# --------------------------------------------------------------------------
# Core operations


def forward_diffuse(x0: Tensor, t, eps: Tensor, sched: DiffusionSchedule) -> Tensor:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. Differentiable in x0/eps."""
    x0 = x0 if isinstance(x0, Tensor) else Tensor(x0)
    eps = eps if isinstance(eps, Tensor) else Tensor(eps)
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 {x0.shape} and eps {eps.shape} differ")
    ab = sched.alpha_bar_at(t)
    if np.ndim(ab) == 0:
        return x0 * float(np.sqrt(ab)) + eps * float(np.sqrt(1.0 - ab))
    if x0.data.ndim == 2:
        ab = ab.reshape(-1, 1)
    return x0 * Tensor(np.sqrt(ab)) + eps * Tensor(np.sqrt(1.0 - ab))


def l_dm(model: Denoiser, sched: DiffusionSchedule, x0: Tensor, c, t: int,
         eps: Tensor) -> Tensor:
    """Diffusion loss ||eps - eps_hat(x_t, t, c)||^2 at one drawn (t, eps).

    For batched x0 the per-item squared norms are averaged.
    """
    t = sched.check_step(t)
    x_t = forward_diffuse(x0, t, eps, sched)
    pred = model.forward(x_t, t, c)
    resid = sub(eps if isinstance(eps, Tensor) else Tensor(eps), pred)
    sq = resid * resid
    if sq.data.ndim == 1:
        return sum_all(sq)
    return mean_all(sum_axis(sq, 1))


def diffusion_loss_batch(model: Denoiser, sched: DiffusionSchedule, x0: Tensor,
                         c, t_arr, eps: Tensor):
    """Mean loss over a batch with per-item timesteps.

    Returns (scalar loss Tensor, per-item float array) so callers can trace
    individual items without a second forward pass.
    """
    x_t = forward_diffuse(x0, t_arr, eps, sched)
    pred = model.forward(x_t, t_arr, c)
    resid = sub(eps, pred)
    per_item = sum_axis(resid * resid, 1)
    loss = mean_all(per_item)
    return loss, per_item.data.copy()


def mc_diffusion_loss(model: Denoiser, sched: DiffusionSchedule, x, c,
                      n_samples: int, rng: RngStream) -> float:
    """Monte-Carlo estimate of E_{t,eps} l_dm at x (no gradients)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    xb = Tensor(np.atleast_2d(x.data))
    total = 0.0
    for _ in range(n_samples):
        t_arr = rng.integers(1, sched.T + 1, (xb.data.shape[0],))
        eps = gaussian(rng, xb.shape)
        loss, _ = diffusion_loss_batch(model, sched, xb, c, t_arr, eps)
        total += loss.item()
    return total / float(n_samples)


@dataclass
class TrainConfig:
    steps: int = 4000
    batch_size: int = 128
    lr: float = 1e-3
    uncond_prob: float = 0.15
    cond_noise: float = 0.25   # condition augmentation; smooths the response
    ema_decay: float | None = 0.995   # final params = EMA of the trajectory
    loss_threshold: float | None = None


def train_denoiser(model: Denoiser, sched: DiffusionSchedule, data, labels,
                   cfg: TrainConfig, rng: RngStream) -> np.ndarray:
    """Train the epsilon predictor in place; returns the loss curve.

    Raises TrainingDivergedError on NaN loss, or if the mean loss over the
    last 10% of steps stays above the configured threshold.
    """
    data = np.asarray(data, dtype=Float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ConfigError("training data must be a non-empty [N, D] array")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape[0] != data.shape[0]:
            raise ConfigError("labels must align with data rows")
        if model.cond_table is None:
            raise ConfigError("labelled training needs a class-condition table")
    n = data.shape[0]
    bs = min(cfg.batch_size, n)
    opt = Adam(len(model.params), cfg.lr)
    curve = np.zeros(cfg.steps, dtype=np.float64)
    ema = None
    if cfg.ema_decay is not None:
        if not 0.0 <= cfg.ema_decay < 1.0:
            raise ConfigError("ema_decay must be in [0, 1)")
        ema = [p.data.astype(np.float64) for p in model.params]

    for step in range(cfg.steps):
        idx = rng.integers(0, n, (bs,))
        x0 = Tensor(data[idx])
        t_arr = rng.integers(1, sched.T + 1, (bs,))
        eps = gaussian(rng, (bs, data.shape[1]))
        with GradientTape() as tape:
            model.watch(tape)
            if labels is None:
                cond = None
            else:
                cond = gather_rows(model.cond_table, labels[idx])
                if cfg.cond_noise > 0.0:
                    cond = cond + gaussian(rng, cond.shape) * cfg.cond_noise
                if cfg.uncond_prob > 0.0:
                    keep = (rng.uniform((bs,)) >= cfg.uncond_prob)
                    cond = cond * Tensor(keep.astype(Float).reshape(-1, 1))
            loss, _ = diffusion_loss_batch(model, sched, x0, cond, t_arr, eps)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss at step {step}")
        curve[step] = value
        grads = tape.gradient(loss, model.params)
        model.set_params(opt.step(model.params, grads))
        if ema is not None:
            d = cfg.ema_decay
            ema = [d * e + (1.0 - d) * p.data for e, p in zip(ema, model.params)]

    if ema is not None:
        model.set_params([Tensor(e.astype(Float)) for e in ema])

    tail = curve[-max(1, cfg.steps // 10):]
    if cfg.loss_threshold is not None and tail.mean() > cfg.loss_threshold:
        raise TrainingDivergedError(
            f"mean tail loss {tail.mean():.4f} above threshold "
            f"{cfg.loss_threshold}"
        )
    return curve


def _reverse_step(model: Denoiser, sched: DiffusionSchedule, x: np.ndarray,
                  t: int, c, rng: RngStream) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1} with sigma_t^2 = beta_t."""
    beta = float(sched.betas[t - 1])
    alpha = float(sched.alphas[t - 1])
    abar = float(sched.alpha_bar[t - 1])
    eps_hat = model.forward(Tensor(x), t, c).data
    mean = (x - (beta / np.sqrt(1.0 - abar)) * eps_hat) / np.sqrt(alpha)
    if t > 1:
        mean = mean + np.sqrt(beta) * rng.normal(x.shape)
    return mean.astype(Float)


def _as_cond(c):
    if c is None or isinstance(c, Tensor):
        return c
    return Tensor(c)


def sample(model: Denoiser, sched: DiffusionSchedule, c, count: int,
           rng: RngStream) -> Tensor:
    """Ancestral sampling from pure noise; deterministic for a fixed stream."""
    if count < 0:
        raise ConfigError("count must be >= 0")
    c = _as_cond(c)
    x = rng.normal((count, model.data_dim))
    if count == 0:
        return Tensor(x)
    for t in range(sched.T, 0, -1):
        x = _reverse_step(model, sched, x, t, c, rng)
    return Tensor(x)


def img2img(model: Denoiser, sched: DiffusionSchedule, c, source,
            strength: float, rng: RngStream) -> Tensor:
    """Partially diffuse the source to s = round(strength*T), then denoise back."""
    if not 0.0 < strength <= 1.0:
        raise ConfigError(f"strength must be in (0, 1], got {strength}")
    c = _as_cond(c)
    src = source.data if isinstance(source, Tensor) else np.asarray(source, Float)
    squeeze = src.ndim == 1
    x = np.atleast_2d(src).astype(Float)
    s = max(1, int(round(strength * sched.T)))
    abar = float(sched.alpha_bar[s - 1])
    x = (np.sqrt(abar) * x + np.sqrt(1.0 - abar) * rng.normal(x.shape)).astype(Float)
    for t in range(s, 0, -1):
        x = _reverse_step(model, sched, x, t, c, rng)
    return Tensor(x[0] if squeeze else x)


def diffpure(model: Denoiser, sched: DiffusionSchedule, x, t_star: int,
             rng: RngStream) -> Tensor:
    """Purification: forward-diffuse to t_star, unconditional reverse to 0."""
    t_star = sched.check_step(t_star)
    src = x.data if isinstance(x, Tensor) else np.asarray(x, Float)
    squeeze = src.ndim == 1
    out = np.atleast_2d(src).astype(Float)
    abar = float(sched.alpha_bar[t_star - 1])
    out = (np.sqrt(abar) * out
           + np.sqrt(1.0 - abar) * rng.normal(out.shape)).astype(Float)
    for t in range(t_star, 0, -1):
        out = _reverse_step(model, sched, out, t, None, rng)
    return Tensor(out[0] if squeeze else out)
