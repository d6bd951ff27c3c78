"""Preprocessing defenses applied to adversarial pixels before evaluation.

All operate on [0,1] pixel data shaped [H,W], [B,H,W], or flattened with a
square pixel count, and return the input's shape. jpeg_like quantizes 8x8
block DCT coefficients with the standard luminance table scaled by a
quality factor; tvm runs monotone gradient descent on a smoothed total
variation objective; resample round-trips through a bilinear downscale.
The diffusion-based purification lives in diffusion.diffpure and is wired
in here only at the config level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

from .errors import ConfigError
from .tensor import Float, GradientTape, Tensor, narrow, reshape, sqrt, sub, sum_all

# Standard JPEG luminance quantization table (Annex K), row-major.
_QUANT_BASE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass
class DefenseConfig:
    kind: str                   # jpeg_like | tvm | resample | diffpure | none
    quality: int = 75
    tv_weight: float = 0.05
    tv_iters: int = 50
    factor: float = 2.0
    t_star: int | None = None   # diffpure; None = T // 4

    def __post_init__(self):
        kinds = ("none", "jpeg_like", "tvm", "resample", "diffpure")
        if self.kind not in kinds:
            raise ConfigError(f"unknown defense kind {self.kind!r}")
        if not 1 <= int(self.quality) <= 100:
            raise ConfigError("quality must be in 1..100")
        if self.tv_weight < 0.0:
            raise ConfigError("tv_weight must be >= 0")
        if self.tv_iters < 0:
            raise ConfigError("tv_iters must be >= 0")
        if self.factor < 1.0:
            raise ConfigError("resample factor must be >= 1")
        if self.t_star is not None and self.t_star < 1:
            raise ConfigError("t_star must be >= 1")


def _as_images(x) -> tuple[np.ndarray, tuple]:
    """Coerce to [B, H, W] float32; returns (batch, original shape)."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=Float)
    arr = arr.astype(Float)
    shape = arr.shape
    if arr.ndim == 3:
        return arr.copy(), shape
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        return arr[None].copy(), shape
    flat = arr if arr.ndim == 2 else arr[None, :] if arr.ndim == 1 else None
    if flat is None:
        raise ConfigError(f"pixel data expected, got shape {shape}")
    side = math.isqrt(flat.shape[1])
    if side * side != flat.shape[1] or side == 0:
        raise ConfigError(
            f"flat input of {flat.shape[1]} values is not a square image"
        )
    return flat.reshape(flat.shape[0], side, side).copy(), shape


def _restore(imgs: np.ndarray, shape: tuple) -> np.ndarray:
    return imgs.reshape(shape).astype(Float)


def _quant_table(quality: int) -> np.ndarray:
    """Quality-scaled table on the [0,1] pixel scale."""
    q = int(quality)
    scale = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    tbl = np.floor((_QUANT_BASE * scale + 50.0) / 100.0)
    return np.clip(tbl, 1.0, 255.0) / 255.0


def jpeg_like(x, quality: int = 75):
    """Block-DCT quantization round trip, the lossy core of JPEG."""
    if not 1 <= int(quality) <= 100:
        raise ConfigError("quality must be in 1..100")
    imgs, shape = _as_images(x)
    b, h, w = imgs.shape
    ph, pw = (-h) % 8, (-w) % 8
    pad = np.pad(imgs, ((0, 0), (0, ph), (0, pw)), mode="edge")
    hh, ww = pad.shape[1], pad.shape[2]
    blocks = pad.reshape(b, hh // 8, 8, ww // 8, 8).transpose(0, 1, 3, 2, 4)
    coef = dctn(blocks.astype(np.float64) - 0.5, axes=(-2, -1), norm="ortho")
    tbl = _quant_table(quality)
    coef = np.round(coef / tbl) * tbl
    rec = idctn(coef, axes=(-2, -1), norm="ortho") + 0.5
    rec = rec.transpose(0, 1, 3, 2, 4).reshape(b, hh, ww)[:, :h, :w]
    return _restore(np.clip(rec, 0.0, 1.0), shape)


def _tv_objective(y: Tensor, x0: Tensor, lam: float, eps_s: float) -> Tensor:
    """||y - x0||^2 + lam * sum charbonnier(forward diffs), both axes."""
    d = sub(y, x0)
    obj = sum_all(d * d)
    if lam > 0.0:
        b, h, w = y.data.shape
        e2 = float(eps_s) ** 2
        dv = sub(narrow(y, 1, 1, h - 1), narrow(y, 1, 0, h - 1))
        dh = sub(narrow(y, 2, 1, w - 1), narrow(y, 2, 0, w - 1))
        obj = obj + lam * sum_all(sqrt(dv * dv + e2))
        obj = obj + lam * sum_all(sqrt(dh * dh + e2))
    return obj


def tvm(x, lam: float = 0.05, iters: int = 50, eps_s: float = 1e-3,
        lr: float = 0.1, trace: list | None = None):
    """Total-variation smoothing by monotone gradient descent from y = x.

    Backtracking halves the step until the objective decreases, so the
    traced objective is non-increasing by construction.
    """
    if lam < 0.0 or iters < 0:
        raise ConfigError("lam and iters must be >= 0")
    imgs, shape = _as_images(x)
    x0 = Tensor(imgs)
    y = imgs.copy()
    step = float(lr)
    yt = Tensor(y)
    with GradientTape() as tape:
        tape.watch(yt)
        obj = _tv_objective(yt, x0, lam, eps_s)
    cur = obj.item()
    if trace is not None:
        trace.append(cur)
    for _ in range(iters):
        g = tape.gradient(obj, yt).data
        accepted = False
        while step > 1e-12:
            cand = y - step * g
            ct = Tensor(cand)
            with GradientTape() as t2:
                t2.watch(ct)
                o2 = _tv_objective(ct, x0, lam, eps_s)
            if o2.item() <= cur:
                y, yt, tape, obj, cur = cand, ct, t2, o2, o2.item()
                accepted = True
                break
            step *= 0.5
        if trace is not None:
            trace.append(cur)
        if not accepted:
            break
        step *= 1.5
    return _restore(np.clip(y, 0.0, 1.0), shape)


def _bilinear(imgs: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize with edge-clamped bilinear sampling, align-corners false."""
    b, h, w = imgs.shape
    sy, sx = h / out_h, w / out_w
    yy = (np.arange(out_h) + 0.5) * sy - 0.5
    xx = (np.arange(out_w) + 0.5) * sx - 0.5
    y0 = np.clip(np.floor(yy), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xx), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(yy - y0, 0.0, 1.0)[None, :, None]
    fx = np.clip(xx - x0, 0.0, 1.0)[None, None, :]
    top = imgs[:, y0][:, :, x0] * (1 - fx) + imgs[:, y0][:, :, x1] * fx
    bot = imgs[:, y1][:, :, x0] * (1 - fx) + imgs[:, y1][:, :, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(Float)


def resample(x, factor: float = 2.0):
    """Bilinear downscale by factor, then upscale back (low-pass proxy)."""
    if factor < 1.0:
        raise ConfigError("resample factor must be >= 1")
    imgs, shape = _as_images(x)
    b, h, w = imgs.shape
    if factor == 1.0:
        return _restore(imgs, shape)
    dh = max(1, int(round(h / factor)))
    dw = max(1, int(round(w / factor)))
    small = _bilinear(imgs, dh, dw)
    back = _bilinear(small, h, w)
    return _restore(np.clip(back, 0.0, 1.0), shape)


def apply_defense(x, cfg: DefenseConfig, model=None, sched=None, codec=None,
                  rng=None):
    """Dispatch a defense config; diffpure purifies in the latent space."""
    if cfg.kind == "none":
        arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=Float)
        return arr.astype(Float)
    if cfg.kind == "jpeg_like":
        return jpeg_like(x, cfg.quality)
    if cfg.kind == "tvm":
        return tvm(x, cfg.tv_weight, cfg.tv_iters)
    if cfg.kind == "resample":
        return resample(x, cfg.factor)
    # diffpure: encode, diffuse to t_star, unconditional reverse, decode
    from .diffusion import diffpure
    if model is None or sched is None or rng is None:
        raise ConfigError("diffpure needs model, sched, and rng")
    t_star = cfg.t_star if cfg.t_star is not None else max(1, sched.T // 4)
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=Float)
    flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr[None, :]
    if codec is not None:
        z = codec.encode(Tensor(flat)).data
        pur = diffpure(model, sched, z, t_star, rng).data
        out = np.clip(codec.decode(Tensor(pur)).data, 0.0, 1.0)
    else:
        out = diffpure(model, sched, flat, t_star, rng).data
    return out.reshape(arr.shape).astype(Float)
