"""Minimal tape-based reverse-mode differentiation over numpy arrays.

Every op accepts :class:`Node` or plain arrays. When no input is a node the op
just returns the numpy result, so the same network code serves both the
differentiable path and cheap no-gradient forward passes (targets, acting).
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError


class Node:
    __slots__ = ("value", "parents", "backward_fn", "graph", "name")

    def __init__(self, value, parents, backward_fn, graph, name=None):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.graph = graph
        self.name = name

    @property
    def shape(self):
        return self.value.shape

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, name={self.name!r})"


class Graph:
    """Records nodes in creation order, which is a topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: dict[str, Node] = {}

    def param(self, name: str, value) -> Node:
        """Differentiable leaf bound to a parameter name (reused if already bound)."""
        node = self.leaves.get(name)
        if node is None:
            node = Node(np.asarray(value, dtype=np.float64), (), None, self, name)
            self.leaves[name] = node
            self.nodes.append(node)
        return node

    def _record(self, value, parents, backward_fn) -> Node:
        node = Node(value, parents, backward_fn, self)
        self.nodes.append(node)
        return node

    def backward(self, output: Node) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``output`` for every bound leaf."""
        if not isinstance(output, Node) or output.graph is not self:
            raise ValueError("output must be a node of this graph")
        if output.value.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {output.value.shape}")
        adj = {id(output): np.ones_like(output.value)}
        for node in reversed(self.nodes):
            if node.backward_fn is None:
                continue
            g = adj.pop(id(node), None)
            if g is None:
                continue
            grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not isinstance(parent, Node):
                    continue
                key = id(parent)
                prev = adj.get(key)
                adj[key] = pg if prev is None else prev + pg
        out = {}
        for name, leaf in self.leaves.items():
            g = adj.get(id(leaf))
            out[name] = np.zeros_like(leaf.value) if g is None else g
        return out


def backward(graph: Graph, output: Node) -> dict[str, np.ndarray]:
    return graph.backward(output)


def value(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _graph_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    return None


def stop_gradient(x):
    return np.array(value(x))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_check(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic -----------------------------------------------------


def add(a, b):
    av, bv = value(a), value(b)
    graph = _graph_of(a, b)
    _broadcast_check(av, bv, "add")
    out = av + bv
    if graph is None:
        return out
    return graph._record(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value(a), value(b)
    graph = _graph_of(a, b)
    _broadcast_check(av, bv, "sub")
    out = av - bv
    if graph is None:
        return out
    return graph._record(out, (a, b), lambda g: (_unbroadcast(g, av.shape), -_unbroadcast(g, bv.shape)))


def mul(a, b):
    av, bv = value(a), value(b)
    graph = _graph_of(a, b)
    _broadcast_check(av, bv, "mul")
    out = av * bv
    if graph is None:
        return out
    return graph._record(
        out, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def square(x):
    xv = value(x)
    graph = _graph_of(x)
    if graph is None:
        return xv * xv
    return graph._record(xv * xv, (x,), lambda g: (2.0 * g * xv,))


def exp(x):
    xv = value(x)
    out = np.exp(xv)
    graph = _graph_of(x)
    if graph is None:
        return out
    return graph._record(out, (x,), lambda g: (g * out,))


def log(x):
    xv = value(x)
    graph = _graph_of(x)
    out = np.log(xv)
    if graph is None:
        return out
    return graph._record(out, (x,), lambda g: (g / xv,))


def relu(x):
    xv = value(x)
    mask = xv > 0
    out = xv * mask
    graph = _graph_of(x)
    if graph is None:
        return out
    return graph._record(out, (x,), lambda g: (g * mask,))


def tanh(x):
    out = np.tanh(value(x))
    graph = _graph_of(x)
    if graph is None:
        return out
    return graph._record(out, (x,), lambda g: (g * (1.0 - out * out),))


# -- linear algebra -------------------------------------------------------------


def matmul(a, b):
    av, bv = value(a), value(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: shapes {av.shape} and {bv.shape} do not align")
    out = av @ bv
    graph = _graph_of(a, b)
    if graph is None:
        return out
    return graph._record(out, (a, b), lambda g: (g @ bv.T, av.T @ g))


def affine(x, w, b):
    """``x @ w + b`` for a batch ``x`` of shape (N, in)."""
    xv, wv, bv = value(x), value(w), value(b)
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise ShapeError(f"affine: input {xv.shape} does not match weight {wv.shape}")
    if bv.shape != (wv.shape[1],):
        raise ShapeError(f"affine: bias {bv.shape} does not match weight {wv.shape}")
    out = xv @ wv + bv
    graph = _graph_of(x, w, b)
    if graph is None:
        return out

    def bwd(g):
        return (
            g @ wv.T if isinstance(x, Node) else None,
            xv.T @ g if isinstance(w, Node) else None,
            g.sum(axis=0) if isinstance(b, Node) else None,
        )

    return graph._record(out, (x, w, b), bwd)


# -- reductions and indexing ------------------------------------------------------


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    xv = value(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)
    graph = _graph_of(x)
    if graph is None:
        return out

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return graph._record(np.asarray(out), (x,), bwd)


def mean(x, axis=None):
    xv = value(x)
    n = xv.size if axis is None else xv.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def gather(x, index):
    """Pick ``x[i, index[i]]`` for each row of a 2-D ``x``."""
    xv = value(x)
    index = np.asarray(index)
    if xv.ndim != 2 or index.shape != (xv.shape[0],):
        raise ShapeError(f"gather: index {index.shape} does not match rows of {xv.shape}")
    rows = np.arange(xv.shape[0])
    out = xv[rows, index]
    graph = _graph_of(x)
    if graph is None:
        return out

    def bwd(g):
        full = np.zeros_like(xv)
        full[rows, index] = g
        return (full,)

    return graph._record(out, (x,), bwd)


def concat(xs, axis=0):
    vals = [value(x) for x in xs]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    graph = _graph_of(*xs)
    if graph is None:
        return out
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return graph._record(out, tuple(xs), bwd)


# -- probability heads --------------------------------------------------------------


def softmax(x):
    xv = value(x)
    z = np.exp(xv - xv.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)
    graph = _graph_of(x)
    if graph is None:
        return out

    def bwd(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return graph._record(out, (x,), bwd)


def log_softmax(x):
    xv = value(x)
    shifted = xv - xv.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    graph = _graph_of(x)
    if graph is None:
        return out
    probs = np.exp(out)

    def bwd(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return graph._record(out, (x,), bwd)


def entropy_from_logits(x):
    """Shannon entropy of ``softmax(x)`` per row, in closed form."""
    logp = log_softmax(x)
    p = softmax(x)
    return mul(sum(mul(p, logp), axis=-1), -1.0)


def l2_normalize(x, eps: float = 1e-8):
    """Row-normalize; norms below ``eps`` are clamped to ``eps``."""
    xv = value(x)
    norm = np.sqrt((xv * xv).sum(axis=-1, keepdims=True))
    clamped = norm < eps
    denom = np.where(clamped, eps, norm)
    out = xv / denom
    graph = _graph_of(x)
    if graph is None:
        return out

    def bwd(g):
        radial = (g * out).sum(axis=-1, keepdims=True)
        # clamped rows are a plain scaling by 1/eps
        return (np.where(clamped, g / denom, (g - out * radial) / denom),)

    return graph._record(out, (x,), bwd)


def huber(x, delta: float = 1.0):
    xv = value(x)
    a = np.abs(xv)
    quad = a <= delta
    out = np.where(quad, 0.5 * xv * xv, delta * (a - 0.5 * delta))
    graph = _graph_of(x)
    if graph is None:
        return out
    return graph._record(out, (x,), lambda g: (g * np.where(quad, xv, delta * np.sign(xv)),))
