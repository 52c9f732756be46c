"""Dense float64 tensors with tape-free reverse-mode differentiation.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. :func:`backward`
orders the recorded nodes topologically and visits each exactly once.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from strap.errors import DimensionError

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar; everything routes through the functional ops below
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

    def __neg__(self):
        return mul(self, -1.0)


def _not_scalar(t: Tensor) -> float:
    raise DimensionError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


# ---------------------------------------------------------------------------
# structural


def linear(x, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``y = x @ W.T + b`` over the last axis of ``x``; ``W`` is (d_out, d_in)."""
    x = as_tensor(x)
    if W.data.ndim != 2 or x.shape[-1:] != W.shape[1:]:
        raise DimensionError(f"linear: input shape {x.shape} does not match weight shape {W.shape}")
    if b is not None and b.shape != W.shape[:1]:
        raise DimensionError(f"linear: bias shape {b.shape} does not match weight shape {W.shape}")
    y = x.data @ W.data.T
    if b is not None:
        y = y + b.data

    def back(g):
        flat_g = g.reshape(-1, g.shape[-1])
        flat_x = x.data.reshape(-1, x.shape[-1])
        gx = g @ W.data if x.requires_grad else None
        gW = flat_g.T @ flat_x
        if b is None:
            return gx, gW
        return gx, gW, flat_g.sum(axis=0)

    parents = (x, W) if b is None else (x, W, b)
    return _make(y, parents, back)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[p.shape for p in parts]}: {exc}") from None
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(data, tuple(parts), back)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows ``x[index]``; repeated indices accumulate in the backward pass."""
    index = np.asarray(index, dtype=np.int64)

    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(x.data[index], (x,), back)


def spmm(A: sp.csr_matrix, x: Tensor) -> Tensor:
    """Sparse-dense product ``A @ x`` with a constant sparse left operand."""
    if A.shape[1] != x.shape[0]:
        raise DimensionError(f"spmm: sparse shape {A.shape} does not match {x.shape}")
    At = A.T.tocsr()
    return _make(np.asarray(A @ x.data), (x,), lambda g: (np.asarray(At @ g),))


def segment_mean(members: sp.csr_matrix, x: Tensor) -> Tensor:
    """Row-wise mean of the rows of ``x`` selected by a 0/1 membership matrix.

    Rows of ``members`` with no entries produce zero vectors. Entries are
    summed in ascending column order, so callers that order ``x`` by node id
    get a summation order that does not depend on adjacency-list order.
    """
    counts = np.diff(members.indptr).astype(np.float64)
    inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    summed = spmm(members, x)
    return mul(summed, inv.reshape(-1, 1))


def mean_aggregate(vs: Sequence[Tensor], dim: int | None = None, ids: Sequence[int] | None = None) -> Tensor:
    """Elementwise mean of a set of vectors; the empty set gives zeros of ``dim``."""
    vs = list(vs)
    if ids is not None:
        if len(ids) != len(vs):
            raise DimensionError(f"mean_aggregate: {len(ids)} ids for {len(vs)} members")
        vs = [v for _, v in sorted(zip(ids, vs), key=lambda pair: pair[0])]
    if not vs:
        if dim is None:
            raise DimensionError("mean_aggregate: empty set needs an explicit dim")
        return Tensor(np.zeros(dim))
    shape = vs[0].shape
    for v in vs:
        if v.shape != shape:
            raise DimensionError(f"mean_aggregate: mixed member shapes {shape} and {v.shape}")
    if dim is not None and shape != (dim,):
        raise DimensionError(f"mean_aggregate: members have shape {shape}, expected ({dim},)")
    n = len(vs)
    total = np.zeros(shape)
    for v in vs:
        total = total + v.data
    data = total / n
    return _make(data, tuple(vs), lambda g: tuple(g / n for _ in range(n)))


def total(x: Tensor) -> Tensor:
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


# ---------------------------------------------------------------------------
# losses


def mae_loss(pred, target) -> Tensor:
    """Flat mean of absolute residuals; the subgradient at a zero residual is 0."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mae_loss: prediction shape {pred.shape} vs target shape {target.shape}")
    n = pred.data.size
    if n == 0:
        raise DimensionError("mae_loss: needs at least one instance")
    resid = pred.data - target.data
    sign = np.sign(resid)

    def back(g):
        return g * sign / n, -g * sign / n

    return _make(np.asarray(np.abs(resid).mean()), (pred, target), back)


# ---------------------------------------------------------------------------
# reverse pass


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    The recorded graph is released afterwards; a second call on the same
    loss raises, since the intermediate closures are gone.
    """
    if loss._consumed:
        raise RuntimeError("backward() called twice on the same graph; run the forward pass again")
    if loss.data.size != 1:
        raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        if not node.is_leaf:
            node._parents = ()
            node._backward = None
            node._consumed = True
    loss._consumed = True
