"""Protective perturbation attacks under an L-infinity budget.

All attacks share the same loop skeleton: compute an objective gradient at
the current iterate, take a signed ascent step of size alpha, clip the
perturbation to the epsilon ball around the original, then clamp to the
data range (project before clamp). They differ only in the objective:

  advdm           diffusion loss with (t, eps) resampled every step
  pgd_dm          diffusion loss with one fixed (t, eps) draw
  embedding_attack  encoder displacement ||E(x0) - E(x)||_2
  pgd_classifier  cross-entropy of a victim classifier at the true label

In latent mode the diffusion loss is computed on E(x) and the gradient
flows through the encoder back to the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import Classifier, cross_entropy
from .codec import LatentCodec
from .diffusion import Denoiser, DiffusionSchedule, diffusion_loss_batch
from .errors import ConfigError, NumericError, ShapeError
from .tensor import (
    Float,
    GradientTape,
    RngStream,
    Tensor,
    gaussian,
    sqrt,
    sub,
    sum_all,
    sum_axis,
)


@dataclass
class AttackConfig:
    epsilon: float = 8.0 / 255.0
    alpha: float = 1.0 / 255.0
    n_steps: int = 40
    mode: str = "latent"                      # loss space: latent | pixel
    data_range: tuple | None = (0.0, 1.0)

    def __post_init__(self):
        # epsilon = 0 is allowed as the degenerate no-op budget (output = x0)
        if self.epsilon < 0.0:
            raise ConfigError("epsilon must be >= 0")
        if self.alpha <= 0.0:
            raise ConfigError("alpha must be > 0")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        if self.epsilon > 0.0 and self.alpha > self.epsilon:
            raise ConfigError("alpha must not exceed epsilon")
        if self.mode not in ("latent", "pixel"):
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        if self.data_range is not None:
            lo, hi = self.data_range
            if not lo < hi:
                raise ConfigError("data_range must be (lo, hi) with lo < hi")


@dataclass
class TraceRow:
    step: int
    item: int
    t: int | None           # drawn timestep; None for non-diffusion attacks
    loss: float              # objective at the pre-update iterate
    max_abs_delta: float     # after the update, per item


@dataclass
class BudgetReport:
    passed: bool
    epsilon: float
    max_abs_delta: float
    n_budget_violations: int
    first_violation: tuple | None
    n_range_violations: int
    data_range: tuple | None


@dataclass
class AttackResult:
    x_adv: np.ndarray
    trace: list[TraceRow] = field(default_factory=list)
    budget: BudgetReport | None = None


def verify_budget(x0, x_adv, epsilon: float, data_range=(0.0, 1.0),
                  atol: float = 1e-6) -> BudgetReport:
    """Check |x_adv - x0| <= epsilon everywhere plus data-range membership.

    atol absorbs float32 rounding of x0 + clip(delta).
    """
    x0 = np.asarray(x0, dtype=Float)
    x_adv = np.asarray(x_adv, dtype=Float)
    if x0.shape != x_adv.shape:
        raise ShapeError(f"shape mismatch {x0.shape} vs {x_adv.shape}")
    delta = np.abs(x_adv.astype(np.float64) - x0.astype(np.float64))
    over = delta > epsilon + atol
    first = None
    if over.any():
        first = tuple(int(i) for i in np.argwhere(over)[0])
    n_range = 0
    if data_range is not None:
        lo, hi = data_range
        n_range = int(((x_adv < lo - atol) | (x_adv > hi + atol)).sum())
    return BudgetReport(
        passed=bool(not over.any() and n_range == 0),
        epsilon=float(epsilon),
        max_abs_delta=float(delta.max(initial=0.0)),
        n_budget_violations=int(over.sum()),
        first_violation=first,
        n_range_violations=n_range,
        data_range=data_range,
    )


def _project_and_clamp(x, x0, cfg: AttackConfig) -> np.ndarray:
    delta = np.clip(x - x0, -cfg.epsilon, cfg.epsilon)
    x = (x0 + delta).astype(Float)
    if cfg.data_range is not None:
        x = np.clip(x, cfg.data_range[0], cfg.data_range[1]).astype(Float)
    return x


def _finish(x0, x, trace, cfg: AttackConfig, squeeze: bool) -> AttackResult:
    report = verify_budget(x0, x, cfg.epsilon, cfg.data_range)
    return AttackResult(x[0] if squeeze else x, trace, report)


def _prep(x0) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x0, dtype=Float)
    if arr.ndim == 1:
        return arr[None, :].copy(), True
    if arr.ndim == 2:
        return arr.copy(), False
    raise ShapeError("attacks expect [B, D] or [D] inputs")


def _trace_items(trace, step, t_arr, per_item, x, x0):
    delta = np.abs(x - x0).max(axis=1)
    for i in range(x.shape[0]):
        t_i = None if t_arr is None else int(t_arr[i])
        trace.append(TraceRow(step, i, t_i, float(per_item[i]),
                              float(delta[i])))


def _check_latent_setup(codec, cfg):
    if cfg.mode == "latent" and codec is None:
        raise ConfigError("latent mode needs a codec")


def _diffusion_ascent(model, sched, codec, x0, c, cfg, rng,
                      resample: bool) -> AttackResult:
    _check_latent_setup(codec, cfg)
    x0, squeeze = _prep(x0)
    x = x0.copy()
    n = x.shape[0]
    noise_dim = codec.latent_dim if cfg.mode == "latent" else x.shape[1]
    t_arr = eps = None
    if not resample and cfg.n_steps > 0:
        t_arr = rng.integers(1, sched.T + 1, (n,))
        eps = gaussian(rng, (n, noise_dim))
    trace: list[TraceRow] = []
    for step in range(cfg.n_steps):
        if resample:
            t_arr = rng.integers(1, sched.T + 1, (n,))
            eps = gaussian(rng, (n, noise_dim))
        xt = Tensor(x)
        with GradientTape() as tape:
            tape.watch(xt)
            z = codec.encode(xt) if cfg.mode == "latent" else xt
            loss, per_item = diffusion_loss_batch(model, sched, z, c,
                                                  t_arr, eps)
        g = tape.gradient(loss, xt).data
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient at step {step}")
        x = _project_and_clamp(x + cfg.alpha * np.sign(g), x0, cfg)
        _trace_items(trace, step, t_arr, per_item, x, x0)
    return _finish(x0, x, trace, cfg, squeeze)


def advdm(model: Denoiser, sched: DiffusionSchedule, codec: LatentCodec | None,
          x0, c, cfg: AttackConfig, rng: RngStream) -> AttackResult:
    """Monte-Carlo signed ascent on the diffusion loss: fresh (t, eps) each
    step. The default protective perturbation."""
    return _diffusion_ascent(model, sched, codec, x0, c, cfg, rng,
                             resample=True)


def pgd_dm(model: Denoiser, sched: DiffusionSchedule, codec: LatentCodec | None,
           x0, c, cfg: AttackConfig, rng: RngStream) -> AttackResult:
    """PGD on the diffusion loss at one fixed (t, eps) draw."""
    return _diffusion_ascent(model, sched, codec, x0, c, cfg, rng,
                             resample=False)


def embedding_attack(codec: LatentCodec, x0, cfg: AttackConfig,
                     rng: RngStream) -> AttackResult:
    """Signed ascent on the encoder displacement ||E(x0) - E(x)||_2,
    starting from a random point inside the budget ball."""
    x0, squeeze = _prep(x0)
    z_ref = codec.encode(Tensor(x0)).data
    init = x0 + cfg.epsilon * rng.normal(x0.shape)
    x = _project_and_clamp(init, x0, cfg)
    trace: list[TraceRow] = []
    for step in range(cfg.n_steps):
        xt = Tensor(x)
        with GradientTape() as tape:
            tape.watch(xt)
            d = sub(codec.encode(xt), Tensor(z_ref))
            dist = sqrt(sum_axis(d * d, 1))
            obj = sum_all(dist)
        per_item = dist.data.copy()
        g = tape.gradient(obj, xt).data
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient at step {step}")
        x = _project_and_clamp(x + cfg.alpha * np.sign(g), x0, cfg)
        _trace_items(trace, step, None, per_item, x, x0)
    return _finish(x0, x, trace, cfg, squeeze)


def pgd_classifier(clf: Classifier, x0, labels, cfg: AttackConfig,
                   rng: RngStream) -> AttackResult:
    """Untargeted PGD: signed ascent on cross-entropy at the true label."""
    x0, squeeze = _prep(x0)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape[0] != x0.shape[0]:
        raise ShapeError("labels must align with inputs")
    x = x0.copy()
    trace: list[TraceRow] = []
    for step in range(cfg.n_steps):
        xt = Tensor(x)
        with GradientTape() as tape:
            tape.watch(xt)
            logits = clf.forward(xt)
            loss, per_item = cross_entropy(logits, labels)
        g = tape.gradient(loss, xt).data
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient at step {step}")
        x = _project_and_clamp(x + cfg.alpha * np.sign(g), x0, cfg)
        _trace_items(trace, step, None, per_item, x, x0)
    return _finish(x0, x, trace, cfg, squeeze)


ATTACK_NAMES = ("none", "advdm", "pgd_dm", "embedding_attack", "pgd_classifier")
