"""Distributional metrics: Frechet distance between Gaussian fits and
k-nearest-neighbour manifold precision/recall."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, SampleSizeError
from .tensor import Tensor


def embed(codec, images) -> np.ndarray:
    """Feature matrix [N, d] for metric computation.

    With a codec, features are encoder outputs; with codec=None the raw
    examples are flattened (pixel fallback).
    """
    arr = images.data if isinstance(images, Tensor) else np.asarray(images)
    flat = arr.reshape(arr.shape[0], -1).astype(np.float32)
    if codec is None:
        return flat.astype(np.float64)
    z = codec.encode(Tensor(flat))
    return z.data.astype(np.float64)


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition; negative
    eigenvalues (numerical noise) are clamped to zero."""
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def _mean_cov(x: np.ndarray):
    mu = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1)
    return mu, np.atleast_2d(cov)


def frechet(a, b) -> float:
    """||mu_a - mu_b||^2 + Tr(C_a + C_b - 2 (C_a C_b)^{1/2}).

    Both feature batches must have n >= d + 1 rows so the covariance
    estimate has full support.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ConfigError("feature batches must be [n, d] with matching d")
    d = a.shape[1]
    for name, x in (("a", a), ("b", b)):
        if x.shape[0] < d + 1:
            raise SampleSizeError(
                f"batch {name} has {x.shape[0]} rows; need at least {d + 1} "
                f"for d={d} features"
            )
    mu_a, cov_a = _mean_cov(a)
    mu_b, cov_b = _mean_cov(b)
    sa = _sqrt_psd(cov_a)
    prod = sa @ cov_b @ sa
    w = np.linalg.eigvalsh((prod + prod.T) / 2.0)
    tr_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    val = float(
        ((mu_a - mu_b) ** 2).sum()
        + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt
    )
    return max(val, 0.0)


def _pairwise_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _knn_radii(x: np.ndarray, k: int) -> np.ndarray:
    """Distance to the k-th nearest neighbour within x, self excluded."""
    d = _pairwise_dist(x, x)
    d_sorted = np.sort(d, axis=1)
    return d_sorted[:, k]  # column 0 is the self-distance


def _covered(points: np.ndarray, manifold: np.ndarray,
             radii: np.ndarray) -> np.ndarray:
    d = _pairwise_dist(points, manifold)
    return (d <= radii[None, :]).any(axis=1)


def precision_recall(real, gen, k: int = 3) -> tuple[float, float]:
    """Manifold precision/recall with k-NN radius estimates.

    precision: fraction of generated points inside the real manifold
    (within some real point's k-NN radius); recall: the converse.
    """
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)
    if real.ndim != 2 or gen.ndim != 2 or real.shape[1] != gen.shape[1]:
        raise ConfigError("feature batches must be [n, d] with matching d")
    n = min(real.shape[0], gen.shape[0])
    if not 1 <= k < n:
        raise ConfigError(f"k must satisfy 1 <= k < min(n_real, n_gen)={n}")
    precision = float(_covered(gen, real, _knn_radii(real, k)).mean())
    recall = float(_covered(real, gen, _knn_radii(gen, k)).mean())
    return precision, recall
