"""Float32 tensors, a reverse-mode gradient tape, and a counter-based RNG.

All numeric state in the package flows through `Tensor` (immutable float32
ndarray) and `RngStream` (explicit seed + counter, no global state). Gradients
come from `GradientTape`: primitives record themselves while a tape is active,
and one backward replay serves training, input-gradient attacks, and
embedding inversion alike.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import MissingLeafError, ShapeError

Float = np.float32


class Tensor:
    """Immutable float32 array. Shape and row-major data, nothing else."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=Float, order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path for freshly computed arrays (no copy).
        t = object.__new__(cls)
        arr = np.asarray(arr, dtype=Float)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if arr.flags.writeable and arr.base is not None:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(t, "data", arr)
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Writable copy of the underlying array."""
        return np.array(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    # Arithmetic sugar; every branch routes through a recorded primitive.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise ShapeError("tensor division only supports scalar divisors")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# Gradient tape


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out          # holds refs so ids stay unique while taped
        self.parents = parents
        self.backward = backward


_TAPES: list["GradientTape"] = []


class GradientTape:
    """Records primitive ops on tracked tensors for one backward replay.

    Use as a context manager; call `watch` on every leaf a gradient is
    needed for before building the computation. `gradient` replays the tape
    once and empties it.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._tracked: set[int] = set()
        self._watched: dict[int, Tensor] = {}

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def watch(self, *tensors: Tensor):
        for t in tensors:
            if not isinstance(t, Tensor):
                raise TypeError("can only watch Tensor leaves")
            self._tracked.add(id(t))
            self._watched[id(t)] = t

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    def _tracks_any(self, tensors) -> bool:
        return any(id(t) in self._tracked for t in tensors)

    def _record(self, out, parents, backward):
        self._tracked.add(id(out))
        self._nodes.append(_Node(out, parents, backward))

    def gradient(self, output: Tensor, leaves):
        """Gradients of a scalar `output` for one leaf or a list of leaves.

        Empties the tape: a second call raises MissingLeafError.
        """
        single = isinstance(leaves, Tensor)
        leaf_list = [leaves] if single else list(leaves)
        for leaf in leaf_list:
            if id(leaf) not in self._watched:
                raise MissingLeafError(
                    "leaf was not watched on this tape before tracing"
                )
        if output.size != 1:
            raise ShapeError(
                f"gradient needs a scalar output, got shape {output.shape}"
            )

        grads: dict[int, np.ndarray] = {
            id(output): np.ones_like(output.data)
        }
        for node in reversed(self._nodes):
            g_out = grads.pop(id(node.out), None)
            if g_out is None:
                continue
            for parent, g in zip(node.parents, node.backward(g_out)):
                if g is None:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + g
                else:
                    grads[pid] = g

        out = []
        for leaf in leaf_list:
            g = grads.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.data)
            if g.shape != leaf.data.shape:
                raise ShapeError(
                    f"gradient shape {g.shape} != leaf shape {leaf.data.shape}"
                )
            out.append(Tensor._wrap(g.astype(Float, copy=False)))

        self._nodes.clear()
        self._tracked.clear()
        self._watched.clear()
        return out[0] if single else out


def grad_wrt(tape: GradientTape, output: Tensor, leaf: Tensor) -> Tensor:
    """Gradient of a scalar output with respect to one watched leaf."""
    return tape.gradient(output, leaf)


def _trace(out_arr: np.ndarray, parents: tuple, backward) -> Tensor:
    """Wrap a primitive's result, recording it on any tape tracking a parent."""
    out = Tensor._wrap(out_arr)
    for tape in _TAPES:
        if tape._tracks_any(parents):
            tape._record(out, parents, backward)
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# Differentiable primitives


def add(a, b) -> Tensor:
    if isinstance(b, (int, float)) or isinstance(a, (int, float)):
        t, s = (a, b) if isinstance(a, Tensor) else (as_tensor(b), a)
        s = float(s)
        return _trace(t.data + Float(s), (t,), lambda g: (g,))
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        return _sum_to_shape(g, a.data.shape), _sum_to_shape(g, b.data.shape)

    return _trace(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        return add(a, -float(b))
    if isinstance(a, (int, float)):
        return add(neg(as_tensor(b)), float(a))
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        return _sum_to_shape(g, a.data.shape), _sum_to_shape(-g, b.data.shape)

    return _trace(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)) or isinstance(a, (int, float)):
        t, s = (a, b) if isinstance(a, Tensor) else (as_tensor(b), a)
        s = float(s)
        return _trace(t.data * Float(s), (t,), lambda g: (g * Float(s),))
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return (
            _sum_to_shape(g * bd, ad.shape),
            _sum_to_shape(g * ad, bd.shape),
        )

    return _trace(out, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _trace(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim != 2:
        raise ShapeError("matmul expects a 1-D/2-D left operand and 2-D right")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}"
        )
    ad, bd = a.data, b.data
    out = ad @ bd

    def bwd(g):
        if ad.ndim == 1:
            return g @ bd.T, np.outer(ad, g)
        return g @ bd.T, ad.T @ g

    return _trace(out, (a, b), bwd)


def matmul_affine(x, weights, bias) -> Tensor:
    """Affine map x @ W + b for 1-D or 2-D (batched) x."""
    x, w, b = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError("weights must be 2-D and bias 1-D")
    if x.data.ndim not in (1, 2) or x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(
            f"affine operand shapes differ: {x.data.shape} @ {w.data.shape}"
        )
    if b.data.shape[0] != w.data.shape[1]:
        raise ShapeError("bias length must match weight columns")
    xd, wd = x.data, w.data
    out = xd @ wd + b.data

    def bwd(g):
        if xd.ndim == 1:
            return g @ wd.T, np.outer(xd, g), g
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    return _trace(out, (x, w, b), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _trace(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = (0.5 * (np.tanh(0.5 * a.data) + 1.0)).astype(Float)
    return _trace(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _trace(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _trace(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bwd(g):
        # Subgradient 0 at exactly 0 keeps the replay finite.
        denom = 2.0 * out
        return (np.where(denom > 0, g / np.where(denom > 0, denom, 1.0), 0.0),)

    return _trace(out, (a,), bwd)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape
    return _trace(
        np.asarray(a.data.sum(), dtype=Float),
        (a,),
        lambda g: (np.broadcast_to(g, shape).astype(Float),),
    )


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = float(a.data.size)
    shape = a.data.shape
    return _trace(
        np.asarray(a.data.mean(), dtype=Float),
        (a,),
        lambda g: ((np.broadcast_to(g, shape) / Float(n)).astype(Float),),
    )


def sum_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape
    out = a.data.sum(axis=axis)

    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).astype(Float),)

    return _trace(out, (a,), bwd)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _trace(out, tuple(ts), bwd)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis`."""
    a = as_tensor(a)
    if not (0 <= start and start + length <= a.data.shape[axis]):
        raise ShapeError("narrow slice out of bounds")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    shape = a.data.shape

    def bwd(g):
        full = np.zeros(shape, dtype=Float)
        full[idx] = g
        return (full,)

    return _trace(np.ascontiguousarray(a.data[idx]), (a,), bwd)


def gather_rows(table, indices) -> Tensor:
    """Rows of a [K, D] table selected by an integer vector."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2 or idx.ndim != 1:
        raise ShapeError("gather_rows expects a 2-D table and 1-D indices")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError("gather_rows index out of range")
    shape = table.data.shape

    def bwd(g):
        full = np.zeros(shape, dtype=Float)
        np.add.at(full, idx, g)
        return (full,)

    return _trace(table.data[idx], (table,), bwd)


def tile_rows(v, n: int) -> Tensor:
    """Repeat a 1-D vector as n rows."""
    v = as_tensor(v)
    if v.data.ndim != 1:
        raise ShapeError("tile_rows expects a 1-D vector")
    out = np.tile(v.data, (n, 1))
    return _trace(out, (v,), lambda g: (g.sum(axis=0),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    return _trace(
        a.data.reshape(shape), (a,), lambda g: (g.reshape(old),)
    )


def sign(a) -> Tensor:
    """Elementwise -1/0/+1. Not differentiable; never recorded on a tape."""
    a = as_tensor(a)
    return Tensor._wrap(np.sign(a.data))


# --------------------------------------------------------------------------
# Counter-based randomness


def _mix_seed(seed: int, tag) -> int:
    h = hashlib.blake2b(f"{seed}/{tag}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class RngStream:
    """Deterministic random stream addressed by (seed, counter).

    Uniforms come from the Philox counter-based generator; the counter counts
    4x64-bit Philox blocks, and every draw rounds its consumption up to a
    whole block, so (seed, counter) alone pins the remainder of the stream.
    Normals are Box-Muller on those uniforms.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if counter < 0:
            raise ValueError("counter must be non-negative")
        self.seed = seed
        self.counter = int(counter)

    def child(self, tag) -> "RngStream":
        """Independent stream derived from this seed and a tag; counter 0."""
        return RngStream(_mix_seed(self.seed, tag))

    def _uniform_f64(self, n: int) -> np.ndarray:
        if n == 0:
            return np.empty(0, dtype=np.float64)
        blocks = (n + 3) // 4
        bg = np.random.Philox(key=self.seed)
        bg.advance(self.counter)
        u = np.random.Generator(bg).random(blocks * 4)
        self.counter += blocks
        return u[:n]

    def uniform(self, shape=()) -> np.ndarray:
        """Uniform [0, 1) float32 array of the given shape."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = self._uniform_f64(n).astype(Float)
        return u.reshape(shape) if shape else u.reshape(())

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal float32 array via Box-Muller."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = self._uniform_f64(2 * n)
        r = np.sqrt(-2.0 * np.log1p(-u[:n]))
        z = (r * np.cos(2.0 * np.pi * u[n:])).astype(Float)
        return z.reshape(shape) if shape else z.reshape(())

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers uniform on [low, high)."""
        if high <= low:
            raise ValueError("need high > low")
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = self._uniform_f64(n)
        v = (low + np.floor(u * (high - low))).astype(np.int64)
        v = np.minimum(v, high - 1)
        return v.reshape(shape) if shape else int(v[0])

    def shuffled(self, n: int) -> np.ndarray:
        """A permutation of range(n) (Fisher-Yates on stream integers)."""
        perm = np.arange(n)
        if n > 1:
            js = self.integers(0, n, (n - 1,))  # draw wide, fold below
            for i in range(n - 1, 0, -1):
                j = int(js[n - 1 - i]) % (i + 1)
                perm[i], perm[j] = perm[j], perm[i]
        return perm


def gaussian(rng: RngStream, shape) -> Tensor:
    """Standard-normal Tensor drawn from the stream."""
    return Tensor._wrap(rng.normal(shape))
