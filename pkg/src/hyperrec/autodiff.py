"""Dense float64 tensors with a dynamic reverse-mode tape.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure propagating the upstream gradient to them. The graph is rebuilt on
each forward pass; :meth:`Tensor.backward` walks it in reverse topological
order and accumulates into ``.grad``.
"""
from __future__ import annotations

import math
import struct
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

NORM_EPS = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class GradientCheckError(RuntimeError):
    """The checked function produced a non-finite value."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return hadamard(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# core ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "hadamard")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        a._accumulate(g * c)

    return _result(a.data * c, (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules (leading dims broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), backward)


def spmm(m, x: Tensor) -> Tensor:
    """Constant (sparse or dense) matrix times a differentiable tensor."""
    if m.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {m.shape} and {x.shape}")
    mt = m.T

    def backward(g):
        x._accumulate(np.asarray(mt @ g))

    return _result(np.asarray(m @ x.data), (x,), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(np.swapaxes(g, -1, -2))

    return _result(np.swapaxes(a.data, -1, -2).copy(), (a,), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    widths = {p.shape[1:] for p in parts}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows: trailing shapes differ {sorted(widths)}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                p._accumulate(g[lo:hi])

    return _result(np.concatenate([p.data for p in parts], axis=0), parts, backward)


def sum_rows(a: Tensor) -> Tensor:
    """Sum over the row axis, keeping a 1-row result."""

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _result(a.data.sum(axis=0, keepdims=True), (a,), backward)


def mean_rows(a: Tensor) -> Tensor:
    n = a.shape[0]
    if n == 0:
        raise ShapeError("mean_rows: no rows")
    return scale(sum_rows(a), 1.0 / n)


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 0-d tensor."""

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _result(np.asarray(a.data.sum()), (a,), backward)


def reduce_sum(a: Tensor, axis: int) -> Tensor:
    def backward(g):
        a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _result(a.data.sum(axis=axis), (a,), backward)


def index(a: Tensor, key) -> Tensor:
    """``a[key]`` with scatter-add backward (duplicates accumulate)."""

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        a._accumulate(full)

    return _result(np.array(a.data[key]), (a,), backward)


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    return index(a, idx)


def segment_sum(a: Tensor, segments, n_segments: int) -> Tensor:
    """Row ``k`` of the result is the sum of rows of ``a`` whose segment id is ``k``."""
    segments = np.asarray(segments, dtype=np.int64)
    out = np.zeros((n_segments,) + a.shape[1:])
    np.add.at(out, segments, a.data)

    def backward(g):
        a._accumulate(g[segments])

    return _result(out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), backward)


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum. Every input index must appear in the output or the other operand."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for own, other in ((sa, sb), (sb, sa)):
        stray = set(own) - set(other) - set(out)
        if stray:
            raise ShapeError(f"einsum: index {sorted(stray)} is summed within one operand")

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.einsum(f"{out},{sb}->{sa}", g, b.data))
        if b.requires_grad:
            b._accumulate(np.einsum(f"{out},{sa}->{sb}", g, a.data))

    try:
        data = np.einsum(subscripts, a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"einsum {subscripts}: {a.shape} and {b.shape}: {exc}") from None
    return _result(data, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def backward(g):
        a._accumulate(g * y)

    return _result(y, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g / a.data)

    return _result(np.log(a.data), (a,), backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - y * y))

    return _result(y, (a,), backward)


def sin(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g * np.cos(a.data))

    return _result(np.sin(a.data), (a,), backward)


def cos(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g * np.sin(a.data))

    return _result(np.cos(a.data), (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    factor = np.where(a.data > 0, 1.0, slope)

    def backward(g):
        a._accumulate(g * factor)

    return _result(a.data * factor, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(np.float64)

    def backward(g):
        a._accumulate(g * mask)

    return _result(a.data * mask, (a,), backward)


def identity(a: Tensor) -> Tensor:
    return a


# ---------------------------------------------------------------------------
# normalisation, softmax family


def normalize_rows(a: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Unit-normalise along the last axis; vectors with norm <= eps map to zero."""
    norm = np.linalg.norm(a.data, axis=-1, keepdims=True)
    live = norm > eps
    safe = np.where(live, norm, 1.0)
    y = np.where(live, a.data / safe, 0.0)

    def backward(g):
        proj = np.sum(g * y, axis=-1, keepdims=True)
        a._accumulate(np.where(live, (g - y * proj) / safe, 0.0))

    return _result(y, (a,), backward)


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis. Entries where ``mask`` is False get probability 0."""
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    shift = np.max(x, axis=-1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    e = np.exp(x - shift)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g):
        a._accumulate(y * (g - np.sum(g * y, axis=-1, keepdims=True)))

    return _result(y, (a,), backward)


def softmax_row(a: Tensor) -> Tensor:
    if a.data.ndim != 2 or a.shape[0] != 1:
        raise ShapeError(f"softmax_row expects a 1 x n tensor, got {a.shape}")
    return softmax(a)


def logsumexp(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Max-shifted log-sum-exp over the last axis, optionally restricted to ``mask``."""
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    shift = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - shift)
    s = np.sum(e, axis=-1, keepdims=True)
    y = (np.log(s) + shift)[..., 0]
    w = e / s

    def backward(g):
        a._accumulate(np.expand_dims(g, -1) * w)

    return _result(y, (a,), backward)


def logsumexp_row(a: Tensor) -> Tensor:
    if a.data.ndim != 2 or a.shape[0] != 1:
        raise ShapeError(f"logsumexp_row expects a 1 x n tensor, got {a.shape}")
    return reshape(logsumexp(a), ())


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine of two equally shaped tensors; zero-norm rows score 0."""
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity: shapes {a.shape} and {b.shape}")
    return reduce_sum(hadamard(normalize_rows(a), normalize_rows(b)), axis=-1)


def squared_norm(a: Tensor) -> Tensor:
    return total(hadamard(a, a))


# ---------------------------------------------------------------------------
# gradient checking


def gradient_check(
    f: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` is called with the input tensors and must return a scalar tensor.
    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    xs = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    for x in xs:
        x.requires_grad = True
        x.grad = None
    out = f(*xs)
    if not np.all(np.isfinite(out.data)):
        raise GradientCheckError(f"f(x) is not finite: {out.data}")
    out.backward()
    worst = 0.0
    for x in xs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f(*xs).data)
            flat[i] = orig - eps
            down = float(f(*xs).data)
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise GradientCheckError(f"f is not finite near coordinate {i}")
            numeric = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# binary tensor format: magic, u64 rank, u64 extents, little-endian f64 payload

MAGIC = b"HRTNSR01"


def dump_array(arr: np.ndarray, fh) -> None:
    arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
    fh.write(MAGIC)
    fh.write(struct.pack("<Q", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def load_array(fh) -> np.ndarray:
    magic = fh.read(8)
    if magic != MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    (rank,) = struct.unpack("<Q", fh.read(8))
    shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
    count = int(np.prod(shape)) if shape else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise ValueError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def save_tensors(path, arrays: Iterable[np.ndarray]) -> None:
    with open(path, "wb") as fh:
        for arr in arrays:
            dump_array(arr, fh)


def load_tensors(path, count: int) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        out = [load_array(fh) for _ in range(count)]
        if fh.read(1):
            raise ValueError("trailing bytes after last tensor")
    return out


def to_sparse(m) -> sp.csr_matrix:
    return m if sp.issparse(m) else sp.csr_matrix(m)
