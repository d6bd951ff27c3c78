"""Small MLP building blocks, Adam, and the sinusoidal time embedding."""

from __future__ import annotations

import numpy as np

from .tensor import Float, GradientTape, RngStream, Tensor, matmul_affine, tanh


def glorot_uniform(rng: RngStream, fan_in: int, fan_out: int) -> Tensor:
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    u = rng.uniform((fan_in, fan_out))
    return Tensor((2.0 * u - 1.0) * bound)


class Mlp:
    """Plain fully connected stack: tanh hidden layers, linear output."""

    def __init__(self, dims: list[int], rng: RngStream):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        self.dims = list(dims)
        self.weights = [
            glorot_uniform(rng, dims[i], dims[i + 1])
            for i in range(len(dims) - 1)
        ]
        self.biases = [
            Tensor(np.zeros(dims[i + 1], dtype=Float))
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = matmul_affine(h, w, b)
            if i != last:
                h = tanh(h)
        return h

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_params(self, params: list[Tensor]):
        n = len(self.weights)
        if len(params) != 2 * n:
            raise ValueError("parameter count mismatch")
        self.weights = [params[2 * i] for i in range(n)]
        self.biases = [params[2 * i + 1] for i in range(n)]

    def watch(self, tape: GradientTape):
        tape.watch(*self.params)


class Adam:
    """Adam over a fixed-length parameter list (state keyed by position)."""

    def __init__(self, n_params: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [None] * n_params
        self.v = [None] * n_params

    def step(self, params: list[Tensor], grads: list[Tensor]) -> list[Tensor]:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            gd = g.data.astype(np.float64)
            if self.m[i] is None:
                self.m[i] = np.zeros_like(gd)
                self.v[i] = np.zeros_like(gd)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * gd
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * gd * gd
            step = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            out.append(Tensor(p.data.astype(np.float64) - step))
        return out


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps; returns [B, dim] float32."""
    if dim % 2 != 0:
        raise ValueError("time embedding dim must be even")
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = ts[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(Float)
