"""Tensor, tape, and RNG contracts, with finite-difference gradient oracles."""

import numpy as np
import pytest

from advdm.errors import MissingLeafError, ShapeError
from advdm.tensor import (
    GradientTape,
    RngStream,
    Tensor,
    concat,
    exp,
    gather_rows,
    gaussian,
    grad_wrt,
    log,
    matmul,
    matmul_affine,
    mean_all,
    narrow,
    neg,
    reshape,
    sigmoid,
    sign,
    sqrt,
    sub,
    sum_all,
    sum_axis,
    tanh,
    tile_rows,
)

from _reference import fd_gradient, mlp_forward, rel_error


def test_tensor_is_float32_and_immutable():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert t.data.dtype == np.float32
    assert t.shape == (2, 2)
    with pytest.raises(ValueError):
        t.data[0, 0] = 9.0
    # numpy() hands out a writable copy, not the backing store
    c = t.numpy()
    c[0, 0] = 9.0
    assert t.data[0, 0] == 1.0


def test_tensor_does_not_capture_caller_array():
    src = np.zeros(3, dtype=np.float32)
    t = Tensor(src)
    src[0] = 5.0
    assert t.data[0] == 0.0
    assert src.flags.writeable


def test_matmul_affine_identity():
    x = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    w = Tensor(np.eye(3, dtype=np.float32))
    b = Tensor(np.zeros(3, dtype=np.float32))
    out = matmul_affine(x, w, b)
    np.testing.assert_array_equal(out.data, x.data)


def test_matmul_affine_scalar_case():
    out = matmul_affine(Tensor([2.0]), Tensor([[3.0]]), Tensor([1.0]))
    np.testing.assert_allclose(out.data, [7.0])


def test_matmul_affine_matches_loop_oracle():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 5)).astype(np.float32)
    w = rng.standard_normal((5, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    out = matmul_affine(Tensor(x), Tensor(w), Tensor(b)).data
    expect = np.zeros((4, 3), dtype=np.float64)
    for i in range(4):
        for j in range(3):
            acc = float(b[j])
            for k in range(5):
                acc += float(x[i, k]) * float(w[k, j])
            expect[i, j] = acc
    np.testing.assert_allclose(out, expect, rtol=1e-5)


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(ShapeError):
        matmul_affine(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))),
                      Tensor(np.ones(5)))


def test_grad_sum_of_squares_is_2x():
    x = Tensor([1.0, -2.0, 3.0])
    with GradientTape() as tape:
        tape.watch(x)
        loss = sum_all(x * x)
    g = grad_wrt(tape, loss, x)
    np.testing.assert_allclose(g.data, 2.0 * x.data, rtol=1e-6)


def test_grad_of_unused_leaf_is_zero():
    x = Tensor([1.0, 2.0])
    y = Tensor([3.0, 4.0])
    with GradientTape() as tape:
        tape.watch(x, y)
        loss = sum_all(y * y)
    g = tape.gradient(loss, [x, y])
    np.testing.assert_array_equal(g[0].data, np.zeros(2, dtype=np.float32))
    np.testing.assert_allclose(g[1].data, 2.0 * y.data)


def test_reused_tensor_accumulates_gradient():
    x = Tensor([1.5, -0.5])
    with GradientTape() as tape:
        tape.watch(x)
        loss = sum_all(x * x + x)  # d/dx = 2x + 1
    g = tape.gradient(loss, x)
    np.testing.assert_allclose(g.data, 2.0 * x.data + 1.0, rtol=1e-6)


def test_unwatched_leaf_raises():
    x = Tensor([1.0])
    with GradientTape() as tape:
        loss = sum_all(x * x)
    with pytest.raises(MissingLeafError):
        tape.gradient(loss, x)


def test_nonscalar_output_raises():
    x = Tensor([1.0, 2.0])
    with GradientTape() as tape:
        tape.watch(x)
        out = x * x
    with pytest.raises(ShapeError):
        tape.gradient(out, x)


def test_tape_empty_after_backward():
    x = Tensor([1.0, 2.0])
    with GradientTape() as tape:
        tape.watch(x)
        loss = sum_all(x * x)
    assert tape.node_count > 0
    tape.gradient(loss, x)
    assert tape.node_count == 0
    with pytest.raises(MissingLeafError):
        tape.gradient(loss, x)


def test_nothing_recorded_without_watch():
    x = Tensor([1.0, 2.0])
    with GradientTape() as tape:
        sum_all(x * x)
    assert tape.node_count == 0


def test_tape_replay_bit_deterministic():
    rng = np.random.default_rng(3)
    xv = rng.standard_normal((4, 6)).astype(np.float32)
    wv = rng.standard_normal((6, 2)).astype(np.float32)

    def run():
        x, w = Tensor(xv), Tensor(wv)
        with GradientTape() as tape:
            tape.watch(x, w)
            loss = mean_all(tanh(x @ w) * tanh(x @ w))
        return tape.gradient(loss, [x, w])

    g1 = run()
    g2 = run()
    assert g1[0].data.tobytes() == g2[0].data.tobytes()
    assert g1[1].data.tobytes() == g2[1].data.tobytes()


# --------------------------------------------------------------------------
# Finite-difference oracle over every differentiable primitive.
# Each case gives a tape-side builder and an independent float64 mirror.

_P = np.random.default_rng(12345)


def _rand(*shape):
    return _P.standard_normal(shape).astype(np.float32)


_PROJ = {}


def _proj(shape):
    # Fixed random projection turns any output into a scalar with
    # non-uniform sensitivities.
    key = tuple(shape)
    if key not in _PROJ:
        _PROJ[key] = _P.standard_normal(shape).astype(np.float32)
    return _PROJ[key]


def _scalarize(out: Tensor) -> Tensor:
    return sum_all(out * Tensor(_proj(out.shape)))


def _scalarize_ref(out: np.ndarray) -> float:
    return float((out * _proj(out.shape).astype(np.float64)).sum())


AUX = {
    "mm_w": _rand(5, 3),
    "aff_w": _rand(4, 2),
    "aff_b": _rand(2),
    "cat_b": _rand(3, 2),
    "idx": np.array([0, 2, 2, 1]),
}

PRIMITIVE_CASES = {
    "add_broadcast": (
        (3, 4),
        lambda x: x + Tensor(AUX["aff_w"].T.reshape(2, 4)[0]),
        lambda x: x + AUX["aff_w"].T.reshape(2, 4)[0].astype(np.float64),
    ),
    "add_scalar": ((3, 4), lambda x: x + 1.5, lambda x: x + 1.5),
    "sub": (
        (3, 4),
        lambda x: sub(x, Tensor(_proj((3, 4)))),
        lambda x: x - _proj((3, 4)).astype(np.float64),
    ),
    "rsub_scalar": ((2, 3), lambda x: 2.0 - x, lambda x: 2.0 - x),
    "mul_broadcast": (
        (3, 4),
        lambda x: x * Tensor(_proj((1, 4))),
        lambda x: x * _proj((1, 4)).astype(np.float64),
    ),
    "mul_scalar": ((3, 4), lambda x: x * -0.7, lambda x: x * -0.7),
    "mul_self": ((3, 4), lambda x: x * x, lambda x: x * x),
    "neg": ((3, 4), lambda x: neg(x), lambda x: -x),
    "div_scalar": ((3, 4), lambda x: x / 4.0, lambda x: x / 4.0),
    "matmul": (
        (4, 5),
        lambda x: x @ Tensor(AUX["mm_w"]),
        lambda x: x @ AUX["mm_w"].astype(np.float64),
    ),
    "matmul_vec": (
        (5,),
        lambda x: x @ Tensor(AUX["mm_w"]),
        lambda x: x @ AUX["mm_w"].astype(np.float64),
    ),
    "matmul_affine": (
        (3, 4),
        lambda x: matmul_affine(x, Tensor(AUX["aff_w"]), Tensor(AUX["aff_b"])),
        lambda x: x @ AUX["aff_w"].astype(np.float64)
        + AUX["aff_b"].astype(np.float64),
    ),
    "tanh": ((3, 4), lambda x: tanh(x), np.tanh),
    "exp": ((3, 4), lambda x: exp(x), np.exp),
    "log": (
        (3, 4),
        lambda x: log(x * x + 0.5),
        lambda x: np.log(x * x + 0.5),
    ),
    "sigmoid": (
        (3, 4),
        lambda x: sigmoid(x),
        lambda x: 1.0 / (1.0 + np.exp(-x)),
    ),
    "sqrt": (
        (3, 4),
        lambda x: sqrt(x * x + 0.5),
        lambda x: np.sqrt(x * x + 0.5),
    ),
    "sum_all": ((3, 4), lambda x: sum_all(x), lambda x: x.sum()),
    "mean_all": ((3, 4), lambda x: mean_all(x), lambda x: x.mean()),
    "sum_axis0": ((3, 4), lambda x: sum_axis(x, 0), lambda x: x.sum(axis=0)),
    "sum_axis1": ((3, 4), lambda x: sum_axis(x, 1), lambda x: x.sum(axis=1)),
    "concat": (
        (3, 4),
        lambda x: concat([x, Tensor(AUX["cat_b"]), x], axis=1),
        lambda x: np.concatenate(
            [x, AUX["cat_b"].astype(np.float64), x], axis=1
        ),
    ),
    "narrow": (
        (4, 6),
        lambda x: narrow(x, 1, 2, 3),
        lambda x: x[:, 2:5],
    ),
    "gather_rows": (
        (3, 4),
        lambda x: gather_rows(x, AUX["idx"]),
        lambda x: x[AUX["idx"]],
    ),
    "tile_rows": ((4,), lambda x: tile_rows(x, 3), lambda x: np.tile(x, (3, 1))),
    "reshape": ((3, 4), lambda x: reshape(x, (2, 6)), lambda x: x.reshape(2, 6)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradient_matches_finite_differences(name):
    shape, build, ref = PRIMITIVE_CASES[name]
    xv = _rand(*shape)
    x = Tensor(xv)
    with GradientTape() as tape:
        tape.watch(x)
        loss = _scalarize(build(x))
    g = tape.gradient(loss, x).data
    g_ref = fd_gradient(lambda a: _scalarize_ref(ref(a)), xv.astype(np.float64))
    assert rel_error(g, g_ref) < 1e-3, name


def test_two_layer_net_gradient_matches_float64_oracle():
    rng = np.random.default_rng(7)
    xv = rng.standard_normal((3, 6)).astype(np.float32)
    w0 = rng.standard_normal((6, 8)).astype(np.float32)
    b0 = rng.standard_normal(8).astype(np.float32)
    w1 = rng.standard_normal((8, 1)).astype(np.float32)
    b1 = rng.standard_normal(1).astype(np.float32)

    x = Tensor(xv)
    with GradientTape() as tape:
        tape.watch(x)
        h = tanh(matmul_affine(x, Tensor(w0), Tensor(b0)))
        out = matmul_affine(h, Tensor(w1), Tensor(b1))
        loss = mean_all(out * out)
    g = tape.gradient(loss, x).data

    def ref_loss(a):
        out = mlp_forward([w0, w1], [b0, b1], a)
        return float((out * out).mean())

    g_ref = fd_gradient(ref_loss, xv.astype(np.float64))
    assert rel_error(g, g_ref) < 1e-3


def test_gradient_for_parameters_and_input_in_one_pass():
    rng = np.random.default_rng(11)
    x = Tensor(rng.standard_normal((4, 3)).astype(np.float32))
    w = Tensor(rng.standard_normal((3, 2)).astype(np.float32))
    b = Tensor(np.zeros(2, dtype=np.float32))
    with GradientTape() as tape:
        tape.watch(x, w, b)
        loss = mean_all(tanh(matmul_affine(x, w, b)))
    gx, gw, gb = tape.gradient(loss, [x, w, b])
    assert gx.shape == x.shape and gw.shape == w.shape and gb.shape == b.shape
    assert float(np.abs(gw.data).max()) > 0.0


def test_sign_values():
    t = sign(Tensor([-3.0, -0.0, 0.0, 5.0, 1e-8]))
    np.testing.assert_array_equal(t.data, [-1.0, 0.0, 0.0, 1.0, 1.0])
    # idempotent
    np.testing.assert_array_equal(sign(t).data, t.data)


def test_sign_not_recorded_on_tape():
    x = Tensor([1.0, -2.0])
    with GradientTape() as tape:
        tape.watch(x)
        y = sign(x)
        loss = sum_all(x * x)
    assert y.data.tolist() == [1.0, -1.0]
    tape.gradient(loss, x)


# --------------------------------------------------------------------------
# RngStream


def test_gaussian_moments():
    z = RngStream(2024).normal((100_000,))
    assert abs(float(z.mean())) < 0.02
    assert abs(float(z.var()) - 1.0) < 0.05


def test_same_seed_same_draws():
    a = RngStream(7).normal((64,))
    b = RngStream(7).normal((64,))
    np.testing.assert_array_equal(a, b)


def test_counter_resume_is_exact():
    s = RngStream(99)
    first = s.normal((10,))
    mid_counter = s.counter
    rest = s.normal((10,))
    resumed = RngStream(99, counter=mid_counter).normal((10,))
    np.testing.assert_array_equal(rest, resumed)
    assert not np.array_equal(first, rest)


def test_mixed_draw_kinds_advance_consistently():
    s = RngStream(5)
    s.uniform((3,))
    s.integers(1, 101, (7,))
    tail = s.normal((4,))
    s2 = RngStream(5)
    s2.uniform((3,))
    s2.integers(1, 101, (7,))
    np.testing.assert_array_equal(tail, s2.normal((4,)))


def test_child_streams_are_independent():
    root = RngStream(1)
    a = root.child("attack").normal((32,))
    b = root.child("train").normal((32,))
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, RngStream(1).child("attack").normal((32,)))


def test_integers_bounds():
    v = RngStream(3).integers(1, 101, (10_000,))
    assert v.min() >= 1 and v.max() <= 100
    assert len(np.unique(v)) > 90  # covers the range


def test_uniform_bounds():
    u = RngStream(4).uniform((10_000,))
    assert u.min() >= 0.0 and u.max() < 1.0
    assert u.dtype == np.float32


def test_gaussian_tensor_wrapper():
    t = gaussian(RngStream(8), (5, 5))
    assert isinstance(t, Tensor) and t.shape == (5, 5)


def test_seed_validation():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(2**64)
