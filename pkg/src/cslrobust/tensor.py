"""Dense float64 tensors with recorded reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad=True`` records a
node holding its parents and a local backward rule. :func:`backward` orders
those nodes topologically (the tape) and replays them in reverse.

Broadcasting is limited to python scalars and size-1 tensors; the only other
shape-mixing primitive is :func:`add_rowvec` for layer biases.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError, DomainError

Number = Union[int, float]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __radd__ = lambda self, other: add(other, self)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __rsub__ = lambda self, other: sub(other, self)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __rmul__ = lambda self, other: mul(other, self)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward_fn, op: str) -> Tensor:
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------- elementwise


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    if _is_scalar(b):
        return a.shape
    if _is_scalar(a):
        return b.shape
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ and neither is scalar")


def _unbroadcast(grad: np.ndarray, like: Tensor) -> np.ndarray:
    if grad.shape == like.shape:
        return grad
    return np.full(like.shape, grad.sum())


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return _make(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)

    return _make(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    out = ad * bd

    def bw(g):
        return _unbroadcast(g * bd, a), _unbroadcast(g * ad, b)

    return _make(out, (a, b), bw, "mul")


def scale(a: Tensor, c: Number) -> Tensor:
    """Multiply by a constant that never receives a gradient."""
    c = float(c)
    out = a.data * c
    return _make(out, (a,), lambda g: (g * c,), "scale")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    if np.any(ad <= 0) or np.any(np.isnan(ad)):
        raise DomainError("log of a non-positive value")
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def relu(a: Tensor) -> Tensor:
    # strict inequality: the subgradient at exactly 0 is 0
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,), "relu")


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name: add, sub, mul, scale, exp, log, relu, neg."""
    binary = {"add": add, "sub": sub, "mul": mul}
    unary = {"exp": exp, "log": log, "relu": relu, "neg": neg}
    if op in binary:
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return binary[op](a, b)
    if op == "scale":
        if b is None:
            raise ContractError("scale needs a constant")
        return scale(as_tensor(a), float(b.item() if isinstance(b, Tensor) else b))
    if op in unary:
        return unary[op](as_tensor(a))
    raise ContractError(f"unknown elementwise op {op!r}")


# ----------------------------------------------------------------- reductions


def _check_axis(a: Tensor, axis: Optional[int]) -> Optional[int]:
    if axis is None:
        return None
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {a.ndim}")
    return axis % a.ndim


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    axis = _check_axis(a, axis)
    out = np.sum(a.data, axis=axis)
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "sum")


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    axis = _check_axis(a, axis)
    count = a.size if axis is None else a.shape[axis]
    out = np.mean(a.data, axis=axis)
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.full(shape, float(g) / count),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / count,)

    return _make(np.asarray(out, dtype=np.float64), (a,), bw, "mean")


def reduce(op: str, a: Tensor, axis: Optional[int] = None) -> Tensor:
    if op == "sum":
        return sum(a, axis)
    if op == "mean":
        return mean(a, axis)
    raise ContractError(f"unknown reduction {op!r}")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got {a.shape}")
    return _make(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,), "transpose")


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add a length-k vector to every row of an [n x k] tensor (layer bias)."""
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rowvec: cannot add {v.shape} to rows of {a.shape}")

    def bw(g):
        return g, g.sum(axis=0)

    return _make(a.data + v.data, (a, v), bw, "add_rowvec")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(out, tensors, bw, "concat")


def take_rows(a: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), bw, "take_rows")


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row by its Euclidean norm."""
    if a.ndim != 2:
        raise DimensionError(f"l2_normalize needs [n x d], got {a.shape}")
    norms = np.sqrt(np.sum(a.data * a.data, axis=1, keepdims=True))
    if np.any(~(norms > eps)):
        bad = int(np.argmin(np.where(np.isnan(norms), -1.0, norms)[:, 0]))
        raise DegenerateInputError(f"row {bad} has norm <= {eps}; cannot normalize")
    y = a.data / norms

    def bw(g):
        # d(x/|x|) = (g - y <y, g>) / |x|
        return ((g - y * np.sum(y * g, axis=1, keepdims=True)) / norms,)

    return _make(y, (a,), bw, "l2_normalize")


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax with max-shift stabilization."""
    if a.ndim != 2:
        raise DimensionError(f"log_softmax needs [n x C], got {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def bw(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return _make(out, (a,), bw, "log_softmax")


# ------------------------------------------------------------- image primitives


def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    cols = np.empty((n, c, k, k, oh, ow))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + oh, j : j + ow]
    # rows: (n, oh, ow); columns: (c, ki, kj)
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * k * k)


def _col2im(cols: np.ndarray, shape, k: int, pad: int) -> np.ndarray:
    n, c, h, w = shape
    oh, ow = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    cols = cols.reshape(n, oh, ow, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(k):
        for j in range(k):
            xp[:, :, i : i + oh, j : j + ow] += cols[:, :, i, j]
    return xp[:, :, pad : pad + h, pad : pad + w]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, pad: int = 1) -> Tensor:
    """Stride-1 cross-correlation. x [n,c,h,w], weight [o,c,k,k], bias [o]."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    oh, ow = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    cols = _im2col(x.data, k, pad)
    wmat = weight.data.reshape(o, -1)
    out = (cols @ wmat.T + bias.data).reshape(n, oh, ow, o).transpose(0, 3, 1, 2)

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gmat.T @ cols).reshape(weight.shape)
        gb = gmat.sum(axis=0)
        gx = _col2im(gmat @ wmat, x.shape, k, pad)
        return gx, gw, gb

    return _make(np.ascontiguousarray(out), (x, weight, bias), bw, "conv2d")


def avg_pool2d(x: Tensor, size: int = 2) -> Tensor:
    n, c, h, w = x.shape
    if h % size or w % size:
        raise DimensionError(f"avg_pool2d: spatial shape {(h, w)} not divisible by {size}")
    out = x.data.reshape(n, c, h // size, size, w // size, size).mean(axis=(3, 5))

    def bw(g):
        up = np.repeat(np.repeat(g, size, axis=2), size, axis=3)
        return (up / (size * size),)

    return _make(out, (x,), bw, "avg_pool2d")


# ------------------------------------------------------------------- backward


def tape(loss: Tensor) -> list[Tensor]:
    """Nodes reachable from ``loss`` in topological order (parents first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    order = tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def finite_difference_grad(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
                           coords: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time.

    ``coords`` restricts evaluation to some flat indices; the others are left 0.
    """
    if h <= 0:
        raise ContractError("step h must be positive")
    base = x.data.astype(np.float64).copy()
    flat = base.reshape(-1)
    out = np.zeros(flat.size)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = as_tensor(f(Tensor(base))).item()
        flat[i] = orig - h
        fm = as_tensor(f(Tensor(base))).item()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape)


def relative_error(a, b, floor: float = 1e-3) -> np.ndarray:
    """|a - b| / max(|a|, |b|, floor): relative above ``floor``, absolute-ish below."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


# ------------------------------------------------------------- serialization


def save_csv(t: Tensor, path: Union[str, Path]) -> None:
    """Shape header line, then one value per line (row-major, repr precision)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(t.shape))
        for v in t.data.reshape(-1):
            w.writerow([repr(float(v))])


def load_csv(path: Union[str, Path]) -> Tensor:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContractError(f"{path}: empty snapshot")
    shape = tuple(int(s) for s in rows[0] if s != "")
    values = np.array([float(r[0]) for r in rows[1:]], dtype=np.float64)
    if values.size != math.prod(shape):
        raise DimensionError(f"{path}: header {shape} but {values.size} values")
    return Tensor(values.reshape(shape))
