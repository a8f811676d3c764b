"""Reverse-mode automatic differentiation on numpy arrays.

A minimal tape: every operation returns a :class:`Tensor` holding the forward
value plus vector-Jacobian closures back to its parents. ``backward(loss)``
walks the graph in reverse topological order and accumulates ``dloss/dleaf``
into every leaf's ``grad`` buffer. Repeated calls accumulate additively.

Everything is float64. Complex quantities are carried as (real, imag) pairs
by the callers; see :mod:`pairsight.optics`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GraphError",
    "constant",
    "leaf",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "swapaxes",
    "reshape",
    "getitem",
    "take",
    "sum_",
    "mean_",
    "exp",
    "log",
    "sqrt",
    "square",
    "sin",
    "cos",
    "tanh",
    "relu",
    "sinc",
    "softmax",
    "log_softmax",
    "quantize_ste",
    "backward",
    "zero_grads",
]


class GraphError(RuntimeError):
    """Raised for malformed graphs (cycles, non-scalar losses)."""


class Tensor:
    """A node in the computation graph.

    ``grad`` is lazily allocated; it keeps accumulating across ``backward``
    calls until :func:`zero_grads` is used.
    """

    __slots__ = ("value", "grad", "requires_grad", "name", "_edges")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        # list of (parent Tensor, vjp: grad_out -> grad_parent)
        self._edges: list[tuple["Tensor", Callable[[np.ndarray], np.ndarray]]] = []

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self._edges

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.value.shape}, grad={self.requires_grad})"

    # operator sugar -------------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def constant(x, name: str = "") -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=False, name=name)


def leaf(x, name: str = "") -> Tensor:
    return Tensor(x, requires_grad=True, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents: Sequence[tuple[Tensor, Callable]], name: str = "") -> Tensor:
    out = Tensor(value, name=name)
    needs = [(p, vjp) for p, vjp in parents if p.requires_grad]
    if needs:
        out.requires_grad = True
        out._edges = needs
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverses numpy broadcasting)."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# binary / unary arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _make(
        a.value + b.value,
        [(a, lambda g: _unbroadcast(g, a.value.shape)),
         (b, lambda g: _unbroadcast(g, b.value.shape))],
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _make(
        a.value - b.value,
        [(a, lambda g: _unbroadcast(g, a.value.shape)),
         (b, lambda g: _unbroadcast(-g, b.value.shape))],
    )


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _make(
        a.value * b.value,
        [(a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
         (b, lambda g: _unbroadcast(g * a.value, b.value.shape))],
    )


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    inv = 1.0 / b.value
    return _make(
        a.value * inv,
        [(a, lambda g: _unbroadcast(g * inv, a.value.shape)),
         (b, lambda g: _unbroadcast(-g * a.value * inv * inv, b.value.shape))],
    )


def neg(a) -> Tensor:
    a = _lift(a)
    return _make(-a.value, [(a, lambda g: -g)])


def matmul(a, b) -> Tensor:
    """Matrix product with leading-dimension broadcasting (inputs ndim >= 2)."""
    a, b = _lift(a), _lift(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError("matmul requires ndim >= 2 operands")

    def vjp_a(g):
        return _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.value.shape)

    def vjp_b(g):
        return _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.value.shape)

    return _make(a.value @ b.value, [(a, vjp_a), (b, vjp_b)])


# shape manipulation ---------------------------------------------------------

def transpose(a) -> Tensor:
    a = _lift(a)
    return _make(a.value.T, [(a, lambda g: np.asarray(g).T)])


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = _lift(a)
    return _make(np.swapaxes(a.value, ax1, ax2),
                 [(a, lambda g: np.swapaxes(g, ax1, ax2))])


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    old = a.value.shape
    return _make(a.value.reshape(shape), [(a, lambda g: np.asarray(g).reshape(old))])


def getitem(a, key) -> Tensor:
    a = _lift(a)

    def vjp(g):
        buf = np.zeros_like(a.value)
        buf[key] = g
        return buf

    return _make(a.value[key], [(a, vjp)])


def take(a, flat_index) -> Tensor:
    """Gather from the flattened array; backward scatter-adds."""
    a = _lift(a)
    idx = np.asarray(flat_index)

    def vjp(g):
        buf = np.zeros(a.value.size)
        np.add.at(buf, idx.ravel(), np.asarray(g).ravel())
        return buf.reshape(a.value.shape)

    return _make(a.value.reshape(-1)[idx], [(a, vjp)])


# reductions -----------------------------------------------------------------

def _restore_axes(g, shape, axis, keepdims):
    g = np.asarray(g)
    if not keepdims:
        if axis is None:
            g = g.reshape((1,) * len(shape))
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(ax % len(shape) for ax in axes)
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    shape = a.value.shape
    return _make(
        a.value.sum(axis=axis, keepdims=keepdims),
        [(a, lambda g: _restore_axes(g, shape, axis, keepdims).copy())],
    )


def mean_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    shape = a.value.shape
    n = a.value.size if axis is None else np.prod(
        [shape[ax % len(shape)] for ax in ((axis,) if isinstance(axis, int) else axis)]
    )
    return _make(
        a.value.mean(axis=axis, keepdims=keepdims),
        [(a, lambda g: _restore_axes(g, shape, axis, keepdims) / n)],
    )


# elementwise nonlinearities --------------------------------------------------

def exp(a) -> Tensor:
    a = _lift(a)
    e = np.exp(a.value)
    return _make(e, [(a, lambda g: g * e)])


def log(a) -> Tensor:
    a = _lift(a)
    return _make(np.log(a.value), [(a, lambda g: g / a.value)])


def sqrt(a) -> Tensor:
    a = _lift(a)
    r = np.sqrt(a.value)
    return _make(r, [(a, lambda g: g * 0.5 / r)])


def square(a) -> Tensor:
    a = _lift(a)
    return _make(a.value * a.value, [(a, lambda g: g * 2.0 * a.value)])


def sin(a) -> Tensor:
    a = _lift(a)
    return _make(np.sin(a.value), [(a, lambda g: g * np.cos(a.value))])


def cos(a) -> Tensor:
    a = _lift(a)
    return _make(np.cos(a.value), [(a, lambda g: -g * np.sin(a.value))])


def tanh(a) -> Tensor:
    a = _lift(a)
    t = np.tanh(a.value)
    return _make(t, [(a, lambda g: g * (1.0 - t * t))])


def relu(a) -> Tensor:
    a = _lift(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def sinc(a) -> Tensor:
    """Unnormalized sinc, sin(x)/x with sinc(0) = 1.

    The derivative (x cos x - sin x)/x^2 switches to its series
    -x/3 + x^3/30 near zero to stay finite.
    """
    a = _lift(a)
    x = a.value
    val = np.sinc(x / np.pi)  # np.sinc is the normalized convention

    def vjp(g):
        small = np.abs(x) < 1e-4
        safe = np.where(small, 1.0, x)
        d = np.where(small, -x / 3.0 + x**3 / 30.0,
                     (safe * np.cos(safe) - np.sin(safe)) / (safe * safe))
        return g * d

    return _make(val, [(a, vjp)])


def softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return s * (g - (g * s).sum(axis=axis, keepdims=True))

    return _make(s, [(a, vjp)])


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    ls = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def vjp(g):
        return g - np.exp(ls) * np.asarray(g).sum(axis=axis, keepdims=True)

    return _make(ls, [(a, vjp)])


def quantize_ste(a, levels: int, period: float = 2.0 * np.pi) -> Tensor:
    """Round to ``levels`` steps per ``period``; identity gradient."""
    a = _lift(a)
    if levels < 2:
        raise ValueError("levels must be >= 2")
    step = period / levels
    return _make(np.round(a.value / step) * step, [(a, lambda g: np.asarray(g))])


# backward pass ---------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Tensor, Iterable]] = [(root, iter(root._edges))]
    state[id(root)] = 1
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent, _ in it:
            st = state.get(id(parent), 0)
            if st == 1:
                raise GraphError("cycle detected in computation graph")
            if st == 0:
                state[id(parent)] = 1
                stack.append((parent, iter(parent._edges)))
                advanced = True
                break
        if not advanced:
            stack.pop()
            state[id(node)] = 2
            order.append(node)
    return order


def backward(loss: Tensor) -> None:
    """Accumulate dloss/dleaf into every reachable leaf's ``grad``.

    ``loss`` must be scalar. Calling twice without :func:`zero_grads`
    doubles the accumulated gradients.
    """
    if loss.value.size != 1:
        raise GraphError("backward requires a scalar loss")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node.is_leaf:
            node.accumulate(g)
        for parent, vjp in node._edges:
            contribution = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contribution
            else:
                grads[key] = contribution


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
