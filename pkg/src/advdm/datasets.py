"""Dataset generators (2-D Gaussian mixtures, synthetic shape images) and
IDX container I/O. Generators draw only from RngStream, so a fixed seed
gives a byte-identical dataset on any platform.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError
from .tensor import Float, RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Array of examples plus integer class labels."""

    x: np.ndarray          # [N, 2] points or [N, H, W] images, float32
    labels: np.ndarray     # [N] int64
    kind: str
    n_classes: int

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def flat(self) -> np.ndarray:
        """Examples flattened to [N, D]."""
        return self.x.reshape(self.x.shape[0], -1)

    @property
    def item_dim(self) -> int:
        return int(np.prod(self.x.shape[1:]))

    def class_indices(self, k: int) -> np.ndarray:
        return np.nonzero(self.labels == k)[0]


def gaussian_mixture_2d(rng: RngStream, n_per_class: int = 500,
                        n_classes: int = 2, radius: float = 0.5,
                        std: float = 0.05) -> Dataset:
    """Isotropic Gaussian blobs with means spaced evenly on a circle."""
    if n_per_class < 1 or n_classes < 1:
        raise ConfigError("need at least one class and one point per class")
    xs, ys = [], []
    for k in range(n_classes):
        ang = 2.0 * np.pi * k / n_classes
        mean = np.array([radius * np.cos(ang), radius * np.sin(ang)])
        pts = mean + std * rng.child(f"class{k}").normal((n_per_class, 2))
        xs.append(pts.astype(Float))
        ys.append(np.full(n_per_class, k, dtype=np.int64))
    return Dataset(np.concatenate(xs), np.concatenate(ys),
                   "gaussian_mixture_2d", n_classes)


def _coverage_disk(gx, gy, cx, cy, r):
    d = np.sqrt((gx - cx) ** 2 + (gy - cy) ** 2)
    return np.clip(r - d + 0.5, 0.0, 1.0)


def _coverage_square(gx, gy, cx, cy, h):
    d = np.maximum(np.abs(gx - cx), np.abs(gy - cy))
    return np.clip(h - d + 0.5, 0.0, 1.0)


def _coverage_cross(gx, gy, cx, cy, w, arm):
    ax = np.clip(w - np.abs(gy - cy) + 0.5, 0.0, 1.0) * \
        np.clip(arm - np.abs(gx - cx) + 0.5, 0.0, 1.0)
    ay = np.clip(w - np.abs(gx - cx) + 0.5, 0.0, 1.0) * \
        np.clip(arm - np.abs(gy - cy) + 0.5, 0.0, 1.0)
    return np.maximum(ax, ay)


def synthetic_shapes(rng: RngStream, n_per_class: int = 150,
                     n_classes: int = 3, size: int = 16,
                     pixel_noise: float = 0.0) -> Dataset:
    """Grayscale images of soft-edged shapes (disk, square, cross) with
    jittered position, scale, and intensity. Values lie in [0, 1]."""
    if not 1 <= n_classes <= 3:
        raise ConfigError("synthetic_shapes supports 1..3 classes")
    if size < 8:
        raise ConfigError("image size must be at least 8")
    gy, gx = np.mgrid[0:size, 0:size].astype(np.float64)
    mid = (size - 1) / 2.0
    imgs, ys = [], []
    for k in range(n_classes):
        s = rng.child(f"class{k}")
        jit = s.uniform((n_per_class, 2)) * 4.0 - 2.0          # center offset
        scale = s.uniform((n_per_class,))
        fg = 0.7 + 0.3 * s.uniform((n_per_class,))
        bg = 0.05 + 0.10 * s.uniform((n_per_class,))
        for i in range(n_per_class):
            cx, cy = mid + jit[i, 0], mid + jit[i, 1]
            if k == 0:
                cov = _coverage_disk(gx, gy, cx, cy, 3.0 + 2.0 * scale[i])
            elif k == 1:
                cov = _coverage_square(gx, gy, cx, cy, 2.5 + 2.0 * scale[i])
            else:
                cov = _coverage_cross(gx, gy, cx, cy,
                                      1.0 + 0.8 * scale[i], 4.0 + 2.0 * scale[i])
            img = bg[i] + (fg[i] - bg[i]) * cov
            imgs.append(img)
            ys.append(k)
    x = np.stack(imgs).astype(Float)
    labels = np.asarray(ys, dtype=np.int64)
    if pixel_noise > 0.0:
        x = x + pixel_noise * rng.child("noise").normal(x.shape)
        x = np.clip(x, 0.0, 1.0).astype(Float)
    return Dataset(x, labels, "synthetic_shapes_16x16", n_classes)


# --------------------------------------------------------------------------
# IDX container format (big-endian magic + dims, then raw unsigned bytes)


def write_idx_images(path, images: np.ndarray):
    """Write [N, H, W] float32 in [0, 1] as IDX unsigned bytes."""
    if images.ndim != 3:
        raise ConfigError("expected [N, H, W] images")
    data = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    n, h, w = data.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(data.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ConfigError("expected a label vector")
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ConfigError("labels must fit in a byte")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.astype(np.uint8).tobytes())


def read_idx_images(path) -> np.ndarray:
    """Read IDX images as float32 in [0, 1], shape [N, H, W]."""
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) < 16:
            raise DataFormatError(f"{path}: truncated IDX header")
        magic, n, h, w = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(
                f"{path}: bad magic 0x{magic:08x}, expected "
                f"0x{IDX_IMAGES_MAGIC:08x}"
            )
        body = f.read()
    expected = n * h * w
    if len(body) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} pixel bytes, found {len(body)}"
        )
    arr = np.frombuffer(body, dtype=np.uint8).reshape(n, h, w)
    return (arr.astype(Float) / 255.0).astype(Float)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) < 8:
            raise DataFormatError(f"{path}: truncated IDX header")
        magic, n = struct.unpack(">II", head)
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(
                f"{path}: bad magic 0x{magic:08x}, expected "
                f"0x{IDX_LABELS_MAGIC:08x}"
            )
        body = f.read()
    if len(body) != n:
        raise DataFormatError(
            f"{path}: expected {n} label bytes, found {len(body)}"
        )
    return np.frombuffer(body, dtype=np.uint8).astype(np.int64)


def read_idx_pair(images_path, labels_path) -> Dataset:
    """Load an images/labels IDX pair as a Dataset."""
    x = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if labels.shape[0] != x.shape[0]:
        raise DataFormatError(
            f"image count {x.shape[0]} != label count {labels.shape[0]}"
        )
    n_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(x, labels, "idx_images", n_classes)


def load_dataset(cfg: dict, rng: RngStream) -> Dataset:
    """Build a dataset from a validated config section."""
    kind = cfg["kind"]
    if kind == "gaussian_mixture_2d":
        return gaussian_mixture_2d(
            rng, n_per_class=cfg["per_class"], n_classes=cfg["classes"],
            radius=cfg["radius"], std=cfg["std"],
        )
    if kind == "synthetic_shapes_16x16":
        return synthetic_shapes(
            rng, n_per_class=cfg["per_class"], n_classes=cfg["classes"],
            size=16, pixel_noise=cfg["pixel_noise"],
        )
    if kind == "idx_images":
        return read_idx_pair(cfg["images_path"], cfg["labels_path"])
    raise ConfigError(f"unknown dataset kind {kind!r}")
