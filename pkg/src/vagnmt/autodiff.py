"""Minimal reverse-mode autodiff over dense numpy arrays.

A Tensor wraps a float ndarray plus the bookkeeping needed to replay the
forward graph backwards: the tensors it was computed from and a closure
that maps the output gradient to per-input gradients.  Graphs are built
implicitly by running ops (define-by-run) and are confined to one thread;
there is no global tape, so independent graphs never interact.

Training code uses float32 throughout.  The ops preserve whatever float
dtype they are given, which lets gradient checks run the same graph in
float64 where central differences are trustworthy.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericError

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Dense float tensor participating in a backward graph.

    `grad` is only ever populated on leaves (tensors created directly,
    typically parameters); intermediate gradients live in scratch storage
    during backward() and are dropped afterwards.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        backward(self)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # A few dunders keep loss arithmetic readable; everything else goes
    # through the module-level functions.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        if other.data.ndim == 1:
            return matvec(self, other)
        return matmul(self, other)


class RankOneGrad:
    """Deferred sum of outer products.

    A backward function may return RankOneGrad(row, col) where it would
    otherwise return np.outer(row, col).  The engine collects all such
    contributions to one parameter and materializes them with a single
    matrix product, which is far cheaper than summing per-step outer
    products over a long sequence.  Each returned object must be fresh;
    the row and col arrays are only read.
    """

    __slots__ = ("rows", "cols")

    def __init__(self, row: np.ndarray, col: np.ndarray):
        self.rows = [row]
        self.cols = [col]

    def absorb(self, other: "RankOneGrad") -> None:
        self.rows += other.rows
        self.cols += other.cols

    def materialize(self) -> np.ndarray:
        if len(self.rows) == 1:
            return np.outer(self.rows[0], self.cols[0])
        return np.stack(self.rows).T @ np.stack(self.cols)


def from_op(data: np.ndarray, parents: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], Sequence]) -> Tensor:
    """Create a graph node for a custom primitive.

    `backward_fn` receives the output gradient and must return one gradient
    per parent: an array (or None), each freshly allocated (never a view of
    the incoming gradient), or a RankOneGrad for an outer-product gradient.
    Recording is skipped entirely under no_grad() or when no parent
    requires grad, so inference pays no graph cost.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's .grad.

    The traversal is iterative (no recursion limit on long sequences) and
    visits nodes in reverse topological order.  Calling backward twice on
    the same graph adds the gradients again.
    """
    if loss.data.size != 1:
        raise ContractError(
            f"backward() needs a scalar loss, got shape {loss.data.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    # A held gradient starts as a borrowed reference to whatever the
    # producing backward returned (it may be shared, e.g. add hands the
    # same array to both parents), so the first accumulation copies and
    # every later one adds in place into the engine-owned buffer.
    grads: dict[int, object] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = set()
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(g, RankOneGrad):
            g = g.materialize()
            fresh = True
        else:
            fresh = id(node) in owned
        if node._backward is None:
            if node.requires_grad:
                if node.grad is None:
                    node.grad = g if fresh else g.copy()
                else:
                    node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            held = grads.get(pid)
            if held is None:
                grads[pid] = pg
            elif isinstance(held, RankOneGrad) and isinstance(pg, RankOneGrad):
                held.absorb(pg)
            else:
                if isinstance(held, RankOneGrad):
                    held = held.materialize()
                    owned.add(pid)
                if isinstance(pg, RankOneGrad):
                    pg = pg.materialize()
                if pid in owned:
                    held += pg
                else:
                    held = held + pg
                    owned.add(pid)
                grads[pid] = held


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise DimensionError(msg)


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"add: shapes {a.shape} vs {b.shape}")
    return from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"sub: shapes {a.shape} vs {b.shape}")
    return from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"mul: shapes {a.shape} vs {b.shape}")
    return from_op(a.data * b.data, (a, b),
                   lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    return from_op(x.data * c, (x,), lambda g: (g * c,))


def shift(x: Tensor, c: float) -> Tensor:
    """Add a scalar constant elementwise."""
    return from_op(x.data + c, (x,), lambda g: (g,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return from_op(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign so the exp never overflows.
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    y[~pos] = e / (1.0 + e)
    return from_op(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)
    return from_op(y, (x,), lambda g: (g * (x.data > 0),))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.ndim == 2 and b.data.ndim == 2,
             f"matmul: need matrices, got {a.shape} and {b.shape}")
    _require(a.shape[1] == b.shape[0],
             f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    return from_op(a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


def matvec(a: Tensor, x: Tensor) -> Tensor:
    _require(a.data.ndim == 2 and x.data.ndim == 1,
             f"matvec: need matrix and vector, got {a.shape} and {x.shape}")
    _require(a.shape[1] == x.shape[0],
             f"matvec: inner dims differ, {a.shape} vs {x.shape}")
    return from_op(a.data @ x.data, (a, x),
                   lambda g: (RankOneGrad(g, x.data), a.data.T @ g))


def dot(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.ndim == 1 and b.data.ndim == 1 and a.shape == b.shape,
             f"dot: need equal-length vectors, got {a.shape} and {b.shape}")
    return from_op(np.asarray(a.data @ b.data), (a, b),
                   lambda g: (g * b.data, g * a.data))


def transpose(m: Tensor) -> Tensor:
    _require(m.data.ndim == 2, f"transpose: need a matrix, got {m.shape}")
    return from_op(np.ascontiguousarray(m.data.T), (m,),
                   lambda g: (np.ascontiguousarray(g.T),))


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a vector to every row of a matrix."""
    _require(m.data.ndim == 2 and v.data.ndim == 1 and m.shape[1] == v.shape[0],
             f"add_rowvec: shapes {m.shape} and {v.shape}")
    return from_op(m.data + v.data, (m, v),
                   lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# reductions and reshaping


def sum_all(x: Tensor) -> Tensor:
    return from_op(np.asarray(x.data.sum()), (x,),
                   lambda g: (np.full_like(x.data, float(g)),))


def mean_rows(m: Tensor) -> Tensor:
    _require(m.data.ndim == 2, f"mean_rows: need a matrix, got {m.shape}")
    n = m.shape[0]
    return from_op(m.data.mean(axis=0), (m,),
                   lambda g: (np.tile(g / n, (n, 1)),))


def row(m: Tensor, i: int) -> Tensor:
    _require(m.data.ndim == 2, f"row: need a matrix, got {m.shape}")

    def bk(g):
        gm = np.zeros_like(m.data)
        gm[i] = g
        return (gm,)

    return from_op(m.data[i].copy(), (m,), bk)


def gather_rows(m: Tensor, indices) -> Tensor:
    """Select rows by index (embedding lookup); duplicates accumulate."""
    _require(m.data.ndim == 2, f"gather_rows: need a matrix, got {m.shape}")
    idx = np.asarray(indices, dtype=np.int64)

    def bk(g):
        gm = np.zeros_like(m.data)
        np.add.at(gm, idx, g)
        return (gm,)

    return from_op(m.data[idx], (m,), bk)


def pick(x: Tensor, i: int) -> Tensor:
    """Select one component of a vector as a scalar."""
    _require(x.data.ndim == 1, f"pick: need a vector, got {x.shape}")

    def bk(g):
        gx = np.zeros_like(x.data)
        gx[i] = g
        return (gx,)

    return from_op(np.asarray(x.data[i]), (x,), bk)


def concat(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.ndim == 1 and b.data.ndim == 1,
             f"concat: need vectors, got {a.shape} and {b.shape}")
    na = a.shape[0]
    return from_op(np.concatenate([a.data, b.data]), (a, b),
                   lambda g: (g[:na].copy(), g[na:].copy()))


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    if not vectors:
        raise DimensionError("stack_rows: need at least one vector")
    _require(all(v.data.ndim == 1 for v in vectors),
             "stack_rows: all inputs must be vectors")
    _require(len({v.shape for v in vectors}) == 1,
             "stack_rows: all vectors must share a length")

    def bk(g):
        return tuple(g[i].copy() for i in range(len(vectors)))

    return from_op(np.stack([v.data for v in vectors]), tuple(vectors), bk)


# ---------------------------------------------------------------------------
# nonlinear blocks


def softmax(x: Tensor) -> Tensor:
    """Stabilized softmax over a vector."""
    _require(x.data.ndim == 1, f"softmax: need a vector, got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax: input contains NaN or Inf")
    e = np.exp(x.data - x.data.max())
    y = e / e.sum()

    def bk(g):
        return ((g - np.dot(g, y)) * y,)

    return from_op(y, (x,), bk)


def log_softmax(x: Tensor) -> Tensor:
    _require(x.data.ndim == 1, f"log_softmax: need a vector, got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("log_softmax: input contains NaN or Inf")
    shifted = x.data - x.data.max()
    y = shifted - np.log(np.exp(shifted).sum())

    def bk(g):
        return (g - np.exp(y) * g.sum(),)

    return from_op(y, (x,), bk)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.ndim == 1 and b.data.ndim == 1 and a.shape == b.shape,
             f"cosine: need equal-length vectors, got {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine: zero-norm operand")
    c = float(a.data @ b.data) / (na * nb)

    def bk(g):
        ga = (b.data / (na * nb) - a.data * (c / (na * na))) * g
        gb = (a.data / (na * nb) - b.data * (c / (nb * nb))) * g
        return (ga, gb)

    return from_op(np.asarray(a.data.dtype.type(c)), (a, b), bk)


def dropout(x: Tensor, p: float, rng: np.random.Generator,
            training: bool) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-p) so eval needs no rescale."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout: rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    keep = keep.astype(x.data.dtype)
    return from_op(x.data * keep, (x,), lambda g: (g * keep,))
