"""Define-by-run reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every operation whose inputs are being tracked.
Outside an active tape (or when no input is tracked) operations run as
plain numpy, which is what inference uses.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A precondition of a public operation was violated."""


_state = threading.local()


def current_tape() -> "Tape | None":
    return getattr(_state, "tape", None)


@dataclass
class _Node:
    kind: str
    inputs: tuple[int | None, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    shape: tuple[int, ...]
    name: str | None = None


class Tensor:
    """An immutable array plus the tape node that produced it (if tracked)."""

    __slots__ = ("data", "node")
    __array_priority__ = 100

    def __init__(self, data, node: int | None = None):
        self.data = np.asarray(data)
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = "" if self.node is None else f", node={self.node}"
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)


@dataclass
class Tape:
    """Append-only record of tracked operations.

    Use as a context manager; operations executed inside the ``with`` block on
    watched tensors are recorded in topological order.
    """

    nodes: list[_Node] = field(default_factory=list)
    grads: dict[int, np.ndarray] = field(default_factory=dict)
    _prev: "Tape | None" = None

    def __enter__(self) -> "Tape":
        self._prev = current_tape()
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = self._prev
        self._prev = None

    def watch(self, array, name: str | None = None) -> Tensor:
        """Register ``array`` as a differentiable leaf."""
        data = np.asarray(array)
        self.nodes.append(_Node("leaf", (), None, data.shape, name))
        return Tensor(data, len(self.nodes) - 1)

    def append(self, kind, inputs, backward, shape) -> int:
        self.nodes.append(_Node(kind, tuple(inputs), backward, tuple(shape)))
        return len(self.nodes) - 1

    def backward(self, root: Tensor) -> dict[str, np.ndarray]:
        """Accumulate adjoints from ``root`` back to every leaf.

        Returns gradients of named leaves; unreached leaves get zeros.
        """
        if root.data.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
        if root.node is None:
            raise ContractError("root is not recorded on this tape")
        grads: dict[int, np.ndarray] = {root.node: np.ones_like(root.data)}
        for idx in range(root.node, -1, -1):
            g = grads.get(idx)
            node = self.nodes[idx]
            if g is None or node.backward is None:
                continue
            for parent, pg in zip(node.inputs, node.backward(g)):
                if parent is None or pg is None:
                    continue
                if parent in grads:
                    grads[parent] = grads[parent] + pg
                else:
                    grads[parent] = pg
        self.grads = grads
        out = {}
        for idx, node in enumerate(self.nodes):
            if node.kind == "leaf" and node.name is not None:
                g = grads.get(idx)
                out[node.name] = np.zeros(node.shape) if g is None else g
        return out

    def grad(self, t: Tensor) -> np.ndarray:
        g = self.grads.get(t.node)
        return np.zeros(t.shape) if g is None else g


def backward(tape: Tape, root: Tensor) -> dict[str, np.ndarray]:
    return tape.backward(root)


# ---------------------------------------------------------------------------
# op plumbing


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _emit(kind, data, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = current_tape()
    if tape is None or all(t.node is None for t in inputs):
        return Tensor(data)
    node = tape.append(kind, [t.node for t in inputs], backward, np.shape(data))
    return Tensor(data, node)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _emit("relu", np.where(mask, a.data, 0.0).astype(a.dtype, copy=False), (a,),
                 lambda g: (g * mask,))


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max subtraction."""
    a = _as_tensor(a)
    if a.ndim == 0 or a.shape[axis] == 0:
        raise DimensionError(f"softmax over an empty axis (shape {a.shape})")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", y, (a,), back)


def l2_normalize(a, epsilon: float = 1e-12, axis: int = -1) -> Tensor:
    """``a / sqrt(|a|^2 + epsilon)`` along ``axis``."""
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    a = _as_tensor(a)
    x = a.data
    r = np.sqrt((x * x).sum(axis=axis, keepdims=True) + epsilon)
    y = x / r

    def back(g):
        dot = (g * x).sum(axis=axis, keepdims=True)
        return (g / r - x * dot / r**3,)

    return _emit("l2_normalize", y, (a,), back)


# ---------------------------------------------------------------------------
# contractions


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _emit("matmul", ad @ bd, (a, b), back)


def einsum(spec: str, *operands) -> Tensor:
    """Explicit-output einsum (``"ij,jk->ik"``); no repeated index within an operand."""
    ts = [_as_tensor(o) for o in operands]
    lhs, out = spec.replace(" ", "").split("->")
    ins = lhs.split(",")
    if len(ins) != len(ts):
        raise DimensionError(f"einsum: {len(ins)} subscripts for {len(ts)} operands")
    sizes: dict[str, int] = {}
    for sub_, t in zip(ins, ts):
        if len(sub_) != t.ndim or len(set(sub_)) != len(sub_):
            raise DimensionError(f"einsum: subscript {sub_!r} does not fit shape {t.shape}")
        for ch, n in zip(sub_, t.shape):
            if sizes.setdefault(ch, n) != n:
                raise DimensionError(
                    f"einsum: index {ch!r} has extents {sizes[ch]} and {n} "
                    f"(shapes {[x.shape for x in ts]})")
    datas = [t.data for t in ts]
    opt = len(ts) > 2
    y = np.einsum(spec, *datas, optimize=opt)

    def back(g):
        res = []
        for i, sub_ in enumerate(ins):
            if ts[i].node is None:
                res.append(None)
                continue
            others = [s for j, s in enumerate(ins) if j != i]
            avail = set(out).union(*others) if others else set(out)
            keep = "".join(ch for ch in sub_ if ch in avail)
            gs = np.einsum(",".join([out] + others) + "->" + keep,
                           g, *[d for j, d in enumerate(datas) if j != i], optimize=opt)
            if keep != sub_:
                shape = [sizes[ch] if ch in keep else 1 for ch in sub_]
                gs = np.broadcast_to(gs.reshape(shape), ts[i].shape).copy()
            res.append(gs)
        return res

    return _emit("einsum", y, ts, back)


def spmm(matrix, b) -> Tensor:
    """Constant sparse (scipy) matrix times a tracked dense matrix."""
    b = _as_tensor(b)
    if matrix.shape[1] != b.shape[0]:
        raise DimensionError(f"spmm: incompatible shapes {matrix.shape} and {b.shape}")
    mt = matrix.T.tocsr()
    y = np.asarray(matrix @ b.data)
    return _emit("spmm", y, (b,), lambda g: (np.asarray(mt @ g),))


# ---------------------------------------------------------------------------
# reductions and shape


def sum(a, axis=None) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit("sum", a.data.sum(axis=axis), (a,), back)


def sumsq(a) -> Tensor:
    """Squared Frobenius norm."""
    a = _as_tensor(a)
    x = a.data
    return _emit("sumsq", np.sum(x * x), (a,), lambda g: (2.0 * g * x,))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _emit("transpose", np.transpose(a.data, axes), (a,),
                 lambda g: (np.transpose(g, inv),))


def take(a, index) -> Tensor:
    """Basic or integer-array indexing; adjoint scatters with accumulation."""
    a = _as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data
    shape, dtype = a.shape, a.dtype

    def back(g):
        full = np.zeros(shape, dtype=g.dtype if g.dtype.kind == "f" else dtype)
        np.add.at(full, index, g)
        return (full,)

    return _emit("take", a.data[index], (a,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _emit("concat", np.concatenate([t.data for t in ts], axis=axis), ts,
                 lambda g: np.split(g, cuts, axis=axis))


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    n = len(ts)

    def back(g):
        return [np.take(g, i, axis=axis) for i in range(n)]

    return _emit("stack", np.stack([t.data for t in ts], axis=axis), ts, back)
