"""Distributional metrics against closed forms and brute-force oracles."""

import numpy as np
import pytest

from advdm.codec import LatentCodec
from advdm.errors import ConfigError, SampleSizeError
from advdm.metrics import embed, frechet, precision_recall
from advdm.tensor import RngStream

from _reference import frechet_1d


def brute_force_precision_recall(real, gen, k=3):
    """O(n^2) literal transcription of the manifold definition."""
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(gen, dtype=np.float64)

    def radii(x):
        out = np.zeros(x.shape[0])
        for i in range(x.shape[0]):
            d = sorted(np.linalg.norm(x[i] - x[j]) for j in range(x.shape[0]))
            out[i] = d[k]  # d[0] is the self distance
        return out

    def covered(points, manifold, r):
        hits = 0
        for p in points:
            if any(np.linalg.norm(p - m) <= ri
                   for m, ri in zip(manifold, r)):
                hits += 1
        return hits / len(points)

    return covered(gen, real, radii(real)), covered(real, gen, radii(gen))


# -- embed ------------------------------------------------------------------


def test_embed_pixel_fallback_flattens():
    imgs = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)
    out = embed(None, imgs)
    assert out.shape == (2, 9) and out.dtype == np.float64
    np.testing.assert_allclose(out, imgs.reshape(2, 9))


def test_embed_uses_encoder(image_bundle):
    b = image_bundle
    out = embed(b.codec, b.dataset.x[:5])
    assert out.shape == (5, b.codec.latent_dim)
    direct = b.codec.encode(b.dataset.flat[:5]).data
    np.testing.assert_allclose(out, direct, atol=1e-7)


def test_embed_ranking_consistent_with_pixels(image_bundle):
    # the encoder must preserve which class a batch is closest to
    b = image_bundle
    x_by_class = [b.dataset.flat[b.dataset.class_indices(k)]
                  for k in range(3)]
    for k in range(3):
        half = x_by_class[k][:75]
        fids = [frechet(embed(b.codec, half), embed(b.codec, ref))
                for ref in x_by_class]
        assert int(np.argmin(fids)) == k


# -- frechet ----------------------------------------------------------------


def test_frechet_identical_batches_is_zero():
    rng = RngStream(2)
    a = rng.normal((100, 5))
    assert frechet(a, a) < 1e-6


def test_frechet_symmetric_and_nonnegative():
    rng = RngStream(3)
    a = rng.normal((60, 4))
    b = rng.normal((60, 4)) * 1.5 + 0.3
    d1, d2 = frechet(a, b), frechet(b, a)
    assert abs(d1 - d2) < 1e-8
    assert d1 > 0.0


def test_frechet_matches_1d_closed_form():
    rng = RngStream(5)
    n = 10000
    a = (rng.normal((n, 1)) * 1.3 + 0.7).astype(np.float64)
    b = (rng.normal((n, 1)) * 0.6 - 0.2).astype(np.float64)
    expect = frechet_1d(0.7, 1.3 ** 2, -0.2, 0.6 ** 2)
    got = frechet(a, b)
    assert abs(got - expect) / expect < 0.10


def test_frechet_rotation_invariant():
    rng = RngStream(7)
    a = rng.normal((300, 3)).astype(np.float64) * np.array([1.0, 2.0, 0.5])
    b = rng.normal((300, 3)).astype(np.float64) + 0.4
    q, _ = np.linalg.qr(rng.normal((3, 3)).astype(np.float64))
    assert abs(frechet(a, b) - frechet(a @ q, b @ q)) < 1e-4


def test_frechet_sample_size_guard():
    rng = RngStream(8)
    with pytest.raises(SampleSizeError):
        frechet(rng.normal((4, 5)), rng.normal((100, 5)))
    with pytest.raises(SampleSizeError):
        frechet(rng.normal((100, 5)), rng.normal((5, 5)))
    with pytest.raises(ConfigError):
        frechet(rng.normal((10, 2)), rng.normal((10, 3)))


# -- precision / recall -----------------------------------------------------


def test_precision_recall_identical_sets():
    rng = RngStream(9)
    x = rng.normal((50, 3))
    p, r = precision_recall(x, x.copy(), k=3)
    assert p == 1.0 and r == 1.0


def test_precision_recall_disjoint_clusters():
    rng = RngStream(10)
    real = rng.normal((40, 2)) * 0.1
    gen = rng.normal((40, 2)) * 0.1 + 100.0
    p, r = precision_recall(real, gen, k=3)
    assert p == 0.0 and r == 0.0


def test_precision_recall_matches_brute_force():
    rng = RngStream(11)
    real = rng.normal((200, 4))
    gen = rng.normal((200, 4)) * 1.2 + 0.5
    for k in (1, 3, 7):
        fast = precision_recall(real, gen, k=k)
        slow = brute_force_precision_recall(real, gen, k=k)
        assert fast == pytest.approx(slow, abs=0.0), f"k={k}"


def test_precision_recall_asymmetric_coverage():
    # mode collapse: a tight cluster on the manifold keeps precision high
    # while recall collapses
    rng = RngStream(12)
    real = rng.normal((120, 2))
    gen = rng.normal((40, 2)) * 0.05 + real[0]
    p, r = precision_recall(real, gen, k=3)
    assert p > 0.9
    assert r < 0.1


def test_precision_recall_rigid_motion_invariant():
    rng = RngStream(13)
    real = rng.normal((80, 3))
    gen = rng.normal((80, 3)) * 1.1
    q, _ = np.linalg.qr(rng.normal((3, 3)).astype(np.float64))
    shift = np.array([2.0, -1.0, 0.5])
    base = precision_recall(real, gen, k=3)
    moved = precision_recall(real @ q + shift, gen @ q + shift, k=3)
    assert base == pytest.approx(moved, abs=1e-12)


def test_precision_recall_k_validation():
    rng = RngStream(14)
    x = rng.normal((10, 2))
    with pytest.raises(ConfigError):
        precision_recall(x, x, k=0)
    with pytest.raises(ConfigError):
        precision_recall(x, x, k=10)
    with pytest.raises(ConfigError):
        precision_recall(x, rng.normal((10, 3)))
