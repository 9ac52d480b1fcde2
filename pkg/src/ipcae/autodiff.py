"""Define-by-run reverse-mode automatic differentiation on float64 arrays.

Every operation returns a new :class:`Var` that remembers its parents and a
closure computing the parents' vector-Jacobian products.  :func:`backward`
orders the reachable graph topologically (the tape) and walks it in reverse.

Gradients are accumulated into ``Var.grad`` of leaves only, so calling
``backward`` twice on the same graph yields exactly twice the gradient;
call :func:`zero_grad` between steps.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import tensor
from .tensor import DTYPE, DimensionError

# training-path matmuls go through BLAS; see tensor.matmul
MATMUL_KERNEL = "blas"


class Var:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "op")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, parents=(), backward_fn=None, op: str = "leaf"):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def const(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def param(x) -> Var:
    return Var(np.array(x, dtype=DTYPE), requires_grad=True)


def _make(value, parents: Sequence[Var], backward_fn, op: str) -> Var:
    needs = any(p.requires_grad for p in parents)
    return Var(value, requires_grad=needs, parents=tuple(parents) if needs else (),
               backward_fn=backward_fn if needs else None, op=op)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Var, b: Var, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Var:
    a, b = const(a), const(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.value + b.value, (a, b), bw, "add")


def sub(a, b) -> Var:
    a, b = const(a), const(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.value - b.value, (a, b), bw, "sub")


def mul(a, b) -> Var:
    a, b = const(a), const(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _make(a.value * b.value, (a, b), bw, "mul")


def div(a, b) -> Var:
    a, b = const(a), const(b)
    _check_broadcast(a, b, "div")

    def bw(g):
        return (_unbroadcast(g / b.value, a.shape),
                _unbroadcast(-g * a.value / (b.value * b.value), b.shape))

    return _make(a.value / b.value, (a, b), bw, "div")


def scale(a, c: float) -> Var:
    a = const(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,), "scale")


def exp(a) -> Var:
    a = const(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Var:
    a = const(a)
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def clamp_min(a, floor: float) -> Var:
    """max(a, floor); zero gradient where the floor is active."""
    a = const(a)
    mask = a.value > floor
    return _make(np.where(mask, a.value, floor), (a,), lambda g: (g * mask,), "clamp_min")


def leaky_relu(a, slope: float = 0.2) -> Var:
    # the subgradient at exactly 0 is the negative-side slope
    a = const(a)
    pos = a.value > 0
    factor = np.where(pos, 1.0, slope)
    return _make(a.value * factor, (a,), lambda g: (g * factor,), "leaky_relu")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Var:
    a, b = const(a), const(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    out = tensor.matmul(a.value, b.value, kernel=MATMUL_KERNEL)

    def bw(g):
        ga = tensor.matmul(g, b.value.T, kernel=MATMUL_KERNEL) if a.requires_grad else None
        gb = tensor.matmul(a.value.T, g, kernel=MATMUL_KERNEL) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def transpose(a) -> Var:
    a = const(a)
    return _make(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def row(a, i: int) -> Var:
    """Row ``i`` of a matrix as a 1-D Var."""
    a = const(a)

    def bw(g):
        out = np.zeros_like(a.value)
        out[i] = g
        return (out,)

    return _make(a.value[i].copy(), (a,), bw, "row")


# ---------------------------------------------------------------- reductions

def sum(a, axis: int | None = None, keepdims: bool = False) -> Var:  # noqa: A001
    a = const(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis: int | None = None, keepdims: bool = False) -> Var:
    a = const(a)
    n = a.value.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Var:
    a = const(a)
    m = a.value.max(axis=axis, keepdims=True)
    shifted = np.exp(a.value - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = m + np.log(total)
    soft = shifted / total
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _make(out, (a,), bw, "logsumexp")


def softmax(a, axis: int = -1) -> Var:
    a = const(a)
    z = np.exp(a.value - a.value.max(axis=axis, keepdims=True))
    s = z / z.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (a,), bw, "softmax")


def log_softmax(a, axis: int = -1) -> Var:
    a = const(a)
    m = a.value.max(axis=axis, keepdims=True)
    shifted = a.value - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bw, "log_softmax")


# ---------------------------------------------------------------- backward

def build_tape(root: Var) -> list[Var]:
    """Topologically ordered list of every node reachable from ``root``."""
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


class ContractError(ValueError):
    pass


def backward(loss: Var) -> dict[Var, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Returns the gradient of every reachable leaf with ``requires_grad`` and
    adds it into that leaf's ``.grad``.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    leaves: dict[Var, np.ndarray] = {}
    for node in reversed(build_tape(loss)):
        g = grads.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        if node.backward_fn is None:
            leaves[node] = g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    for leaf, g in leaves.items():
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    return leaves


def zero_grad(params: Iterable[Var]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[], Var], params: Sequence[Var], h: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` must rebuild the graph from the current ``params`` values on every
    call and be deterministic.
    """
    zero_grad(params)
    analytic = backward(f())
    worst = 0.0
    for p in params:
        auto = analytic.get(p, np.zeros_like(p.value))
        flat = p.value.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(f().value)
            flat[idx] = orig - h
            down = float(f().value)
            flat[idx] = orig
            numeric = (up - down) / (2 * h)
            err = abs(auto.reshape(-1)[idx] - numeric) / max(abs(numeric), 1e-8)
            worst = max(worst, err)
    zero_grad(params)
    return worst
