"""Dense 2-D tensors with tape-free reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and
a closure that pushes the output gradient back to them.  Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order.  Gradients accumulate additively; callers zero them between steps.

All arithmetic is float64.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"Tensor must be 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray, dict], None] | None = None
        self.name = name

    # construction helpers -------------------------------------------------

    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @classmethod
    def zeros(cls, rows: int, cols: int, requires_grad: bool = False) -> Tensor:
        return cls(np.zeros((rows, cols)), requires_grad=requires_grad)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor({self.rows}x{self.cols}{tag}, requires_grad={self.requires_grad})"

    # backward -------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        # intermediate grads live only for the duration of this pass
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            node._backward(g, grads)

    # operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self)))

    def __rsub__(self, other):
        return add(_wrap(other, self), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return NotImplemented

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def sum(self) -> Tensor:
        return sum_all(self)

    def mean(self) -> Tensor:
        return mean_all(self)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None and np.ndim(x) == 0:
        return Tensor(np.full(like.shape, float(x)))
    return Tensor(x)


def _push(grads: dict, t: Tensor, g: np.ndarray) -> None:
    """Route a gradient contribution to ``t``: leaves accumulate, inner nodes buffer."""
    if not t.requires_grad:
        return
    if t._backward is None:
        t._accum(g)
        return
    key = id(t)
    cur = grads.get(key)
    if cur is None:
        grads[key] = g
    else:
        grads[key] = cur + g


# elementwise ----------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a single row broadcast over ``a``'s rows."""
    if a.shape == b.shape:
        def backward(g, grads):
            _push(grads, a, g)
            _push(grads, b, g)
    elif b.rows == 1 and b.cols == a.cols:
        def backward(g, grads):
            _push(grads, a, g)
            _push(grads, b, g.sum(axis=0, keepdims=True))
    elif a.rows == 1 and a.cols == b.cols:
        return add(b, a)
    else:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")
    return Tensor._result(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g, grads):
        _push(grads, a, -g)
    return Tensor._result(-a.data, (a,), backward)


def scale(a: Tensor, s: float) -> Tensor:
    def backward(g, grads):
        _push(grads, a, g * s)
    return Tensor._result(a.data * s, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"elementwise product needs equal shapes, got {a.shape} and {b.shape}")

    def backward(g, grads):
        _push(grads, a, g * b.data)
        _push(grads, b, g * a.data)
    return Tensor._result(a.data * b.data, (a, b), backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g, grads):
        _push(grads, a, g * (1.0 - y * y))
    return Tensor._result(y, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    inner = _SQRT_2_OVER_PI * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def backward(g, grads):
        dinner = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * x * x)
        dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        _push(grads, a, g * dy)
    return Tensor._result(y, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    x = a.data
    y = np.logaddexp(0.0, x)

    def backward(g, grads):
        # sigmoid, written to avoid overflow for large |x|
        sig = np.exp(-np.logaddexp(0.0, -x))
        _push(grads, a, g * sig)
    return Tensor._result(y, (a,), backward)


# linear algebra ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g, grads):
        if a.requires_grad:
            _push(grads, a, g @ b.data.T)
        if b.requires_grad:
            _push(grads, b, a.data.T @ g)
    return Tensor._result(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g, grads):
        _push(grads, a, g.T)
    return Tensor._result(a.data.T.copy(), (a,), backward)


# reductions -------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    def backward(g, grads):
        _push(grads, a, np.full_like(a.data, g[0, 0]))
    return Tensor._result(np.array([[a.data.sum()]]), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g, grads):
        _push(grads, a, np.full_like(a.data, g[0, 0] / n))
    return Tensor._result(np.array([[a.data.mean()]]), (a,), backward)


# row-wise normalisations ------------------------------------------------------


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction."""
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g, grads):
        _push(grads, a, y * (g - (g * y).sum(axis=1, keepdims=True)))
    return Tensor._result(y, (a,), backward)


def log_softmax_rows(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse

    def backward(g, grads):
        p = np.exp(y)
        _push(grads, a, g - p * g.sum(axis=1, keepdims=True))
    return Tensor._result(y, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-9) -> Tensor:
    """Normalise each row to zero mean / unit variance, then apply ``gain`` and ``bias``.

    ``eps`` is kept tiny so normalised rows hit unit variance to ~1e-9.
    """
    if gain.shape != (1, a.cols) or bias.shape != (1, a.cols):
        raise DimensionError(
            f"layer_norm expects gain/bias of shape (1, {a.cols}), got {gain.shape} and {bias.shape}"
        )
    x = a.data
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def backward(g, grads):
        if gain.requires_grad:
            _push(grads, gain, (g * xhat).sum(axis=0, keepdims=True))
        if bias.requires_grad:
            _push(grads, bias, g.sum(axis=0, keepdims=True))
        if a.requires_grad:
            gx = g * gain.data
            n = x.shape[1]
            dx = inv * (gx - gx.mean(axis=1, keepdims=True)
                        - xhat * (gx * xhat).sum(axis=1, keepdims=True) / n)
            _push(grads, a, dx)
    return Tensor._result(y, (a, gain, bias), backward)


# structural -------------------------------------------------------------------


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise DimensionError(
                "concat_rows width mismatch: " + ", ".join(str(q.shape) for q in parts)
            )
    bounds = np.cumsum([0] + [p.rows for p in parts])
    data = np.concatenate([p.data for p in parts], axis=0)

    def backward(g, grads):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                _push(grads, p, g[lo:hi])
    return Tensor._result(data, tuple(parts), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= a.rows:
        raise DimensionError(f"row slice [{start}:{stop}] outside tensor with {a.rows} rows")

    def backward(g, grads):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _push(grads, a, full)
    return Tensor._result(a.data[start:stop].copy(), (a,), backward)


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Embedding lookup: rows ``table[ids]`` with scatter-add backward."""
    idx = np.asarray(ids, dtype=np.intp)

    def backward(g, grads):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _push(grads, table, full)
    return Tensor._result(table.data[idx], (table,), backward)


# verification -----------------------------------------------------------------


def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-3) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` is a closure returning a 1x1 tensor computed from ``params``.  The
    relative error of one entry is ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = list(params)
    for p in params:
        p.grad = None
    out = f()
    if not np.isfinite(out.data).all():
        raise NumericError(f"objective is not finite: {out.data.ravel()}")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        ga = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(f"objective not finite at perturbed entry {i} of {p!r}")
            numeric = (fp - fm) / (2 * h)
            denom = max(abs(ga[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(ga[i] - numeric) / denom)
    return worst
