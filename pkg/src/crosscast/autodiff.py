"""Minimal reverse-mode autodiff over numpy float64 buffers.

Nodes form an implicit DAG: each holds its value, its parents and a closure
that maps the output adjoint to parent adjoints. `backward` walks the graph
in reverse topological order. Only the handful of operations the forecasting
model needs are provided; everything runs in double precision.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, UsageError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """One value in the computation graph.

    grad is None until a backward pass reaches the node; repeated backward
    calls accumulate into it.
    """

    __slots__ = ("value", "grad", "_parents", "_grad_fn")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        grad_fn: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._grad_fn = grad_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    @property
    def T(self) -> "Node":
        return transpose(self)

    # arithmetic sugar; constants are lifted to leaf nodes
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_node(other), -1.0))

    def __rsub__(self, other):
        return add(as_node(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_node(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def __repr__(self):
        return f"Node(shape={self.shape}, leaf={self._grad_fn is None})"


class Param(Node):
    """A named leaf whose gradient the optimizer consumes."""

    __slots__ = ("name",)

    def __init__(self, name: str, value):
        super().__init__(value)
        self.name = name

    def zero_grad(self) -> None:
        self.grad = None


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _topo_order(root: Node) -> list[Node]:
    # Iterative DFS; Holt recurrences build chains deeper than the default
    # Python recursion limit.
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into .grad for every node reachable from loss."""
    if loss.value.size != 1:
        raise UsageError(f"backward requires a scalar root, got shape {loss.shape}")
    order = _topo_order(loss)
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._grad_fn is None:
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None:
                continue
            prev = adjoint.get(id(parent))
            adjoint[id(parent)] = pg if prev is None else prev + pg


# ---------------------------------------------------------------------------
# primitive operations


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value + b.value

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Node(out, (a, b), grad_fn)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value * b.value

    def grad_fn(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Node(out, (a, b), grad_fn)


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value / b.value

    def grad_fn(g):
        ga = _unbroadcast(g / b.value, a.shape)
        gb = _unbroadcast(-g * a.value / (b.value * b.value), b.shape)
        return ga, gb

    return Node(out, (a, b), grad_fn)


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    A, B = a.value, b.value
    out = A @ B

    def grad_fn(g):
        if A.ndim == 1 and B.ndim == 2:  # (n,) @ (n,p)
            return B @ g, np.outer(A, g)
        if A.ndim >= 2 and B.ndim == 1:  # (...,m,n) @ (n,)
            ga = g[..., :, None] * B
            # dB sums A^T g over every leading/batch dim
            gb = np.tensordot(A, g, axes=(list(range(A.ndim - 1)), list(range(g.ndim))))
            return _unbroadcast(ga, A.shape), gb
        ga = _unbroadcast(g @ np.swapaxes(B, -1, -2), A.shape)
        gb = _unbroadcast(np.swapaxes(A, -1, -2) @ g, B.shape)
        return ga, gb

    return Node(out, (a, b), grad_fn)


def transpose(a) -> Node:
    a = as_node(a)
    out = np.swapaxes(a.value, -1, -2)

    def grad_fn(g):
        return (np.swapaxes(g, -1, -2),)

    return Node(out, (a,), grad_fn)


def reshape(a, shape) -> Node:
    a = as_node(a)
    out = a.value.reshape(shape)

    def grad_fn(g):
        return (g.reshape(a.shape),)

    return Node(out, (a,), grad_fn)


def take(a, key) -> Node:
    """Indexing/gather; duplicate indices scatter-add on the way back."""
    a = as_node(a)
    out = a.value[key]

    def grad_fn(g):
        full = np.zeros_like(a.value)
        np.add.at(full, key, g)
        return (full,)

    return Node(out, (a,), grad_fn)


def concat(nodes, axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    out = np.concatenate([n.value for n in nodes], axis=axis)
    sizes = [n.value.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return Node(out, nodes, grad_fn)


def stack(nodes, axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    out = np.stack([n.value for n in nodes], axis=axis)

    def grad_fn(g):
        pieces = np.moveaxis(g, axis, 0)
        return tuple(pieces[i] for i in range(len(nodes)))

    return Node(out, nodes, grad_fn)


def sum_(a, axis=None, keepdims: bool = False) -> Node:
    a = as_node(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Node(out, (a,), grad_fn)


def mean(a, axis=None, keepdims: bool = False) -> Node:
    a = as_node(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def cumsum(a, axis: int = -1) -> Node:
    a = as_node(a)
    out = np.cumsum(a.value, axis=axis)

    def grad_fn(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return Node(out, (a,), grad_fn)


def sigmoid(a) -> Node:
    a = as_node(a)
    # stable logistic: exp of a non-positive argument only
    x = a.value
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return Node(out, (a,), grad_fn)


def absolute(a) -> Node:
    a = as_node(a)
    out = np.abs(a.value)

    def grad_fn(g):
        # subgradient 0 at the kink
        return (g * np.sign(a.value),)

    return Node(out, (a,), grad_fn)


def relu(a) -> Node:
    a = as_node(a)
    out = np.maximum(a.value, 0.0)

    def grad_fn(g):
        return (g * (a.value > 0.0),)

    return Node(out, (a,), grad_fn)


def where(mask: np.ndarray, a, b) -> Node:
    """Select by a constant boolean mask; gradients route to the taken side."""
    a, b = as_node(a), as_node(b)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.value, b.value)

    def grad_fn(g):
        return (
            _unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape),
        )

    return Node(out, (a, b), grad_fn)


def softmax(scores, axis: int = -1) -> Node:
    """Max-subtracted softmax along `axis`."""
    scores = as_node(scores)
    if scores.value.size == 0:
        raise ShapeError("softmax of an empty vector is undefined")
    z = scores.value - scores.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        return ((g - inner) * p,)

    return Node(p, (scores,), grad_fn)


def conv1d(x, kernels) -> Node:
    """Valid 1-d convolution.

    x: (..., L, c_in); kernels: (w, c_in, d) -> (..., L-w+1, d).
    """
    x, kernels = as_node(x), as_node(kernels)
    if x.value.ndim < 2:
        raise ShapeError(f"conv1d input needs (..., length, channels), got {x.shape}")
    w, c_in, d = kernels.shape
    L = x.value.shape[-2]
    if x.value.shape[-1] != c_in:
        raise ShapeError(f"conv1d channel mismatch: input {x.value.shape[-1]}, kernel {c_in}")
    if L < w:
        raise ShapeError(f"conv1d input length {L} shorter than kernel width {w}")
    n_out = L - w + 1
    out = np.zeros(x.value.shape[:-2] + (n_out, d))
    for j in range(w):
        out += x.value[..., j : j + n_out, :] @ kernels.value[j]

    def grad_fn(g):
        gx = np.zeros_like(x.value)
        gk = np.zeros_like(kernels.value)
        lead = list(range(g.ndim - 1))
        for j in range(w):
            gx[..., j : j + n_out, :] += g @ kernels.value[j].T
            gk[j] = np.tensordot(x.value[..., j : j + n_out, :], g, axes=(lead, lead))
        return gx, gk

    return Node(out, (x, kernels), grad_fn)


def avg_pool(x) -> Node:
    """Mean over the time axis: (..., L, d) -> (..., d)."""
    x = as_node(x)
    if x.value.ndim < 2 or x.value.shape[-2] == 0:
        raise ShapeError(f"avg_pool needs a non-empty (..., length, channels) input, got {x.shape}")
    n = x.value.shape[-2]
    out = x.value.mean(axis=-2)

    def grad_fn(g):
        return (np.broadcast_to(g[..., None, :], x.shape) / n,)

    return Node(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# verification


def grad_check(fn: Callable[[], Node], params: Sequence[Param], h: float = 1e-5) -> float:
    """Compare reverse-mode gradients of `fn()` against central differences.

    Returns the max over all coordinates of |analytic - numeric| / max(1, |numeric|).
    `fn` must rebuild its graph from the live param values on every call.
    """
    for p in params:
        p.zero_grad()
    backward(fn())
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = fn().item()
            flat[i] = orig - h
            f_minus = fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(ga.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
