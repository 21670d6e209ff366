"""Minimal define-by-run reverse-mode autodiff over dense float64 arrays.

Every operation returns a new :class:`Tensor`. When at least one input
requires a gradient the output remembers its parents and a closure mapping
the upstream gradient to one gradient per parent; :func:`backward` walks
that record in reverse topological order. The graph is rebuilt on every
forward pass and never reused.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, ParameterError, UsageError

DTYPE = np.float64
COS_EPS = 1e-8
POW_EPS = 1e-4


class Tensor:
    """Dense real array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = "leaf"):
        self.data = np.array(data, dtype=DTYPE) if not isinstance(data, np.ndarray) or data.dtype != DTYPE else data
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward = _backward
        self.op = op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators --------------------------------------------------------
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data, parents: Sequence[Tensor], grad_fn: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of a recorded operation.

    ``grad_fn(g)`` must return one array (or None) per parent, each shaped
    like that parent.
    """
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, grad_fn, op)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, extent in enumerate(shape):
        if extent == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def grad_fn(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return make_op(out, (a, b), grad_fn, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a constant real exponent."""
    a = as_tensor(a)
    e = float(exponent)
    out = a.data ** e

    def grad_fn(g):
        if e == 0.0:
            return (np.zeros_like(a.data),)
        return (g * e * a.data ** (e - 1.0),)

    return make_op(out, (a,), grad_fn, "pow")


def pow_clamped(x, p: float, root: bool = False) -> Tensor:
    """``max(x, 1e-4) ** p`` (or ``** (1/p)`` with ``root=True``).

    The clamped base is used for both the value and the derivative, so the
    derivative of the fractional root stays finite at zero. The derivative
    passes straight through the clamp.
    """
    if p < 1:
        raise ParameterError(f"pow_clamped needs p >= 1, got {p}")
    x = as_tensor(x)
    e = 1.0 / p if root else float(p)
    base = np.maximum(x.data, POW_EPS)
    out = base ** e
    return make_op(out, (x,), lambda g: (g * e * base ** (e - 1.0),), "pow_clamped")


def root_p(s, p: float, grad_floor: float = POW_EPS) -> Tensor:
    """Exact ``s ** (1/p)`` whose derivative is evaluated at ``max(s, grad_floor)``.

    Used by the generalized-mean aggregators: the value stays exact (so the
    closed forms hold to round-off) while the infinite slope at ``s = 0``
    is replaced by a finite one.
    """
    if p < 1:
        raise ParameterError(f"root_p needs p >= 1, got {p}")
    s = as_tensor(s)
    e = 1.0 / p
    out = np.maximum(s.data, 0.0) ** e
    slope = e * np.maximum(s.data, grad_floor) ** (e - 1.0)
    return make_op(out, (s,), lambda g: (g * slope,), "root_p")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(np.atleast_1d(a.data)).reshape(a.shape)
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def where(cond, a, b) -> Tensor:
    """Select ``a`` where the constant boolean ``cond`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def grad_fn(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return make_op(out, (a, b), grad_fn, "where")


# -- reductions and shape ops ----------------------------------------------

def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return make_op(out, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims).copy(),), "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1) if a.data.size else 1.0
    return make_op(out, (a,),
                   lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,), "mean")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return make_op(a.data.T, (a,), lambda g: (g.T,), "transpose")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    out = np.broadcast_to(a.data, shape)
    return make_op(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def index(a, key) -> Tensor:
    """Basic or advanced indexing; gradients scatter-add back."""
    a = as_tensor(a)
    out = a.data[key]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return make_op(out, (a,), grad_fn, "index")


def take_rows(a, rows) -> Tensor:
    """Gather ``a[rows]`` along the first axis."""
    return index(a, np.asarray(rows, dtype=np.intp))


def stack(tensors: Sequence) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors])
    return make_op(out, tensors, lambda g: tuple(g[i] for i in range(len(tensors))), "stack")


# -- the primitives the groundings are built from --------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return make_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def softmax_rows(s) -> Tensor:
    """Row-wise softmax; the per-row max shift is a constant."""
    s = as_tensor(s)
    if s.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {s.shape}")
    shifted = s.data - s.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return make_op(out, (s,), grad_fn, "softmax_rows")


def cosine_similarity(u, v) -> Tensor:
    """``u.v / (|u||v| + 1e-8)`` along the last axis.

    Vectors give a scalar; ``n x d`` matrices give ``n`` row-wise values.
    """
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape or u.ndim not in (1, 2):
        raise DimensionError(f"cosine_similarity shape mismatch: {u.shape} vs {v.shape}")
    ud, vd = u.data, v.data
    dot = (ud * vd).sum(axis=-1)
    nu = np.sqrt((ud * ud).sum(axis=-1))
    nv = np.sqrt((vd * vd).sum(axis=-1))
    denom = nu * nv + COS_EPS
    out = dot / denom

    def grad_fn(g):
        gk = (g / denom)[..., None]
        # u / |u| is taken as 0 for the zero vector
        u_hat = ud / np.where(nu > 0, nu, 1.0)[..., None]
        v_hat = vd / np.where(nv > 0, nv, 1.0)[..., None]
        ratio = (dot / denom)[..., None]
        gu = gk * (vd - ratio * nv[..., None] * u_hat)
        gv = gk * (ud - ratio * nu[..., None] * v_hat)
        return gu, gv

    return make_op(out, (u, v), grad_fn, "cosine")


def mean_pool(f) -> Tensor:
    """Average over the two spatial axes preceding the channel axis.

    ``h x w x b -> b`` and, batched, ``n x h x w x b -> n x b``.
    """
    f = as_tensor(f)
    if f.ndim < 3:
        raise DimensionError(f"mean_pool expects (..., h, w, b), got shape {f.shape}")
    h, w = f.shape[-3], f.shape[-2]
    if h < 1 or w < 1:
        raise DimensionError(f"mean_pool over an empty spatial grid {h}x{w}")
    out = f.data.mean(axis=(-3, -2))

    def grad_fn(g):
        return (np.broadcast_to(g[..., None, None, :], f.shape) / (h * w),)

    return make_op(out, (f,), grad_fn, "mean_pool")


# -- backward pass ---------------------------------------------------------

def graph(root: Tensor) -> list[Tensor]:
    """Recorded nodes reachable from ``root`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else np.array(pg, dtype=DTYPE)


def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f`` is re-evaluated with each coordinate of each parameter nudged by
    ``+-eps``; parameters are restored afterwards.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    backward(f())
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
        p.zero_grad()
    return worst
