"""Small MLP classifier: the surrogate victim for the classifier-space
baseline attack."""

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
    exp,
    log,
    mean_all,
    sub,
    sum_axis,
)


def cross_entropy(logits: Tensor, labels: np.ndarray, smoothing: float = 0.0):
    """Mean cross-entropy; returns (scalar loss, per-item float array).

    The row max is subtracted as a detached constant; the log-sum-exp
    gradient is unaffected by a constant shift.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.data.shape
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    s = sub(logits, shift)
    lse = log(sum_axis(exp(s), 1))
    target = np.zeros((n, k), dtype=Float)
    target[np.arange(n), labels] = 1.0
    if smoothing > 0.0:
        target = (1.0 - smoothing) * target + smoothing / k
    picked = sum_axis(s * Tensor(target), 1)
    per_item = sub(lse, picked)
    return mean_all(per_item), per_item.data.copy()


class Classifier:
    """tanh MLP with a linear logit head."""

    def __init__(self, input_dim: int, n_classes: int, rng: RngStream,
                 hidden: int = 32, depth: int = 2):
        if n_classes < 2:
            raise ConfigError("classifier needs at least two classes")
        self.input_dim = int(input_dim)
        self.n_classes = int(n_classes)
        self.hidden = int(hidden)
        self.depth = int(depth)
        self.mlp = Mlp([input_dim] + [hidden] * depth + [n_classes],
                       rng.child("mlp"))

    def forward(self, x: Tensor) -> Tensor:
        return self.mlp(x if isinstance(x, Tensor) else Tensor(x))

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=Float))
        return self.forward(Tensor(x)).data.argmax(axis=1)

    @property
    def params(self) -> list[Tensor]:
        return self.mlp.params

    def set_params(self, params):
        self.mlp.set_params(params)

    def watch(self, tape: GradientTape):
        tape.watch(*self.params)


@dataclass
class ClassifierTrainConfig:
    steps: int = 800
    batch_size: int = 64
    lr: float = 2e-3
    label_smoothing: float = 0.1


def train_classifier(clf: Classifier, data, labels,
                     cfg: ClassifierTrainConfig, rng: RngStream) -> np.ndarray:
    """Train on flat examples with integer labels; returns the loss curve."""
    data = np.asarray(data, dtype=Float)
    labels = np.asarray(labels, dtype=np.int64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ConfigError("training data must be a non-empty [N, D] array")
    if labels.shape[0] != data.shape[0]:
        raise ConfigError("labels must align with data rows")
    n = data.shape[0]
    bs = min(cfg.batch_size, n)
    opt = Adam(len(clf.params), cfg.lr)
    curve = np.zeros(cfg.steps, dtype=np.float64)
    for step in range(cfg.steps):
        idx = rng.integers(0, n, (bs,))
        with GradientTape() as tape:
            clf.watch(tape)
            logits = clf.forward(Tensor(data[idx]))
            loss, _ = cross_entropy(logits, labels[idx], cfg.label_smoothing)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss at step {step}")
        curve[step] = value
        grads = tape.gradient(loss, clf.params)
        clf.set_params(opt.step(clf.params, grads))
    return curve


def accuracy(clf: Classifier, data, labels) -> float:
    pred = clf.predict(np.asarray(data, dtype=Float))
    return float((pred == np.asarray(labels)).mean())
