"""Shared trained-model fixtures.

Training is the expensive part of this suite, so models are built once per
session and shared. Unit tests and the acceptance criteria draw from the
same caches: `bundle_factory(seed)` yields the full image-lab bundle
(codec + conditional denoiser + classifier) and `point_factory(seed)` the
small unconditional model on 2-D mixture data. Both are deterministic in
the seed, so sharing them never couples tests.
"""

import numpy as np
import pytest

from advdm.config import default_config
from advdm.datasets import gaussian_mixture_2d
from advdm.diffusion import (
    Denoiser,
    DiffusionSchedule,
    TrainConfig,
    train_denoiser,
)
from advdm.pipeline import build_bundle
from advdm.tensor import RngStream


def fit_point_model(seed: int):
    """Unconditional 2-D model on the two-mode mixture; a few seconds."""
    root = RngStream(seed)
    data = gaussian_mixture_2d(root.child("data"), n_per_class=500)
    sched = DiffusionSchedule.quadratic()
    model = Denoiser(2, root.child("init"), cond_dim=0, hidden=64,
                     n_classes=0)
    train_denoiser(model, sched, data.x, None,
                   TrainConfig(steps=4000, batch_size=64, lr=2e-3,
                               uncond_prob=0.0),
                   root.child("train"))
    return root, data, sched, model


@pytest.fixture(scope="session")
def point_factory():
    cache = {}

    def get(seed: int):
        if seed not in cache:
            cache[seed] = fit_point_model(seed)
        return cache[seed]

    return get


@pytest.fixture(scope="session")
def point_setup(point_factory):
    """(root stream, dataset, schedule, trained model) at seed 0."""
    return point_factory(0)


@pytest.fixture(scope="session")
def bundle_factory():
    cache = {}

    def get(seed: int):
        if seed not in cache:
            cache[seed] = build_bundle(default_config(), seed)
        return cache[seed]

    return get


@pytest.fixture(scope="session")
def image_bundle(bundle_factory):
    """Full shapes-lab bundle at seed 0 (codec, denoiser, classifier)."""
    return bundle_factory(0)
