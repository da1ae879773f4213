"""Tape-based reverse-mode autodiff over small dense float64 arrays.

Every differentiable value is a :class:`Tensor`. Tensors that need gradients
belong to a :class:`Graph`; each primitive appends one node to that graph, and
:func:`backward` walks the tape once in reverse. Tensors created without a
graph are constants and never get recorded.

Broadcasting is deliberately absent: apart from ``scalar * tensor`` (and the
bias row of :func:`linear`), operands must agree in shape exactly.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Graph",
    "constant",
    "add",
    "sub",
    "mul",
    "scale",
    "scale_add",
    "linear",
    "relu",
    "absolute",
    "softplus",
    "total",
    "mean",
    "sum_squares",
    "mean_pool",
    "batch_norm",
    "row",
    "weighted_sum",
    "softmax",
    "logsumexp",
    "cross_entropy",
    "mse",
    "backward",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """Operands of a primitive do not conform."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: shape mismatch {joined}")


class Tensor:
    __slots__ = ("data", "graph", "kind", "_parents", "_backward", "__weakref__")

    def __init__(self, data, graph: Graph | None = None, kind: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.graph = graph
        # "alpha" / "w" for trainable leaves, "op" for recorded intermediates
        self.kind = kind
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def requires_grad(self) -> bool:
        return self.graph is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, ())
        return float(self.data.reshape(()))

    def __repr__(self):
        tag = self.kind or "const"
        return f"Tensor({tag}, shape={self.shape})"


class Graph:
    """A tape of recorded nodes; rebuilt for every optimisation step."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.leaves: list[Tensor] = []

    def leaf(self, value, kind: str = "w") -> Tensor:
        if kind not in ("alpha", "w"):
            raise ValueError(f"leaf kind must be 'alpha' or 'w', got {kind!r}")
        t = Tensor(np.array(value, dtype=np.float64, copy=True), self, kind)
        self.leaves.append(t)
        return t

    def _record(self, data, parents, back) -> Tensor:
        t = Tensor(data, self, "op")
        t._parents = tuple(parents)
        t._backward = back
        self.nodes.append(t)
        return t


def constant(value) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _graph_of(op: str, *tensors: Tensor) -> Graph | None:
    g = None
    for t in tensors:
        if t.graph is None:
            continue
        if g is None:
            g = t.graph
        elif t.graph is not g:
            raise ValueError(f"{op}: operands belong to different graphs")
    return g


def _emit(op, data, parents, back) -> Tensor:
    g = _graph_of(op, *parents)
    if g is None:
        return Tensor(data)
    return g._record(data, parents, back)


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def _check_finite(op: str, data: np.ndarray):
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op}: produced non-finite values")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mul", a, b)
    return _emit("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(s, x) -> Tensor:
    """``s * x`` where ``s`` is a one-element tensor (possibly differentiable)."""
    s, x = _as_tensor(s), _as_tensor(x)
    if s.data.size != 1:
        raise ShapeError("scale", s.shape, x.shape)
    sv = float(s.data.reshape(()))

    def back(g):
        return (np.reshape(np.sum(g * x.data), s.shape), sv * g)

    return _emit("scale", sv * x.data, (s, x), back)


def scale_add(a: float, x, b: float, y) -> Tensor:
    """``a*x + b*y`` for fixed real coefficients."""
    x, y = _as_tensor(x), _as_tensor(y)
    _same_shape("scale_add", x, y)
    a, b = float(a), float(b)
    return _emit("scale_add", a * x.data + b * y.data, (x, y), lambda g: (a * g, b * g))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0.0  # subgradient 0 at the kink
    return _emit("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def absolute(x) -> Tensor:
    x = _as_tensor(x)
    sign = np.sign(x.data)
    return _emit("absolute", np.abs(x.data), (x,), lambda g: (g * sign,))


def softplus(x) -> Tensor:
    """Stable ``log(1 + exp(x))``."""
    x = _as_tensor(x)
    v = x.data
    e = np.exp(-np.abs(v))
    out = np.maximum(v, 0.0) + np.log1p(e)
    sig = np.where(v >= 0, 1.0, e) / (1.0 + e)
    return _emit("softplus", out, (x,), lambda g: (g * sig,))


# ---------------------------------------------------------------- reductions


def total(x) -> Tensor:
    x = _as_tensor(x)
    return _emit("total", np.sum(x.data), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean(x) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    return _emit("mean", np.mean(x.data), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def sum_squares(x) -> Tensor:
    x = _as_tensor(x)
    return _emit("sum_squares", np.sum(x.data * x.data), (x,), lambda g: (2.0 * float(g) * x.data,))


def mean_pool(x) -> Tensor:
    """Average over the last axis, keeping it as a size-1 axis."""
    x = _as_tensor(x)
    if x.data.ndim == 0:
        raise ShapeError("mean_pool", x.shape)
    d = x.shape[-1]
    return _emit(
        "mean_pool",
        np.mean(x.data, axis=-1, keepdims=True),
        (x,),
        lambda g: (np.broadcast_to(g / d, x.shape).copy(),),
    )


def batch_norm(x, eps: float = 1e-5) -> Tensor:
    """Standardise every column of a [batch, channels] matrix with its own
    batch statistics; no learned scale or shift."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("batch_norm", x.shape)
    mu = x.data.mean(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(x.data.var(axis=0, keepdims=True) + eps)
    y = (x.data - mu) * inv

    def back(g):
        return (inv * (g - g.mean(axis=0, keepdims=True) - y * (g * y).mean(axis=0, keepdims=True)),)

    return _emit("batch_norm", y, (x,), back)


def row(m, i: int) -> Tensor:
    """Row ``i`` of a matrix (or entry ``i`` of a vector)."""
    m = _as_tensor(m)

    def back(g):
        out = np.zeros(m.shape)
        out[i] = g
        return (out,)

    return _emit("row", m.data[i].copy(), (m,), back)


def weighted_sum(weights, xs: Sequence) -> Tensor:
    """``sum_k weights[k] * xs[k]``; ``weights`` is a vector, ``xs`` share a shape."""
    weights = _as_tensor(weights)
    xs = [_as_tensor(x) for x in xs]
    if weights.data.ndim != 1 or weights.shape[0] != len(xs):
        raise ShapeError("weighted_sum", weights.shape, (len(xs),))
    for x in xs[1:]:
        _same_shape("weighted_sum", xs[0], x)
    wv = weights.data
    out = np.zeros(xs[0].shape)
    for k, x in enumerate(xs):
        out = out + wv[k] * x.data

    def back(g):
        gw = np.array([np.sum(g * x.data) for x in xs])
        return (gw, *[wv[k] * g for k in range(len(xs))])

    return _emit("weighted_sum", out, (weights, *xs), back)


# ---------------------------------------------------------------- dense layers


def linear(x, W, bias=None) -> Tensor:
    """``x @ W.T + bias`` for ``x`` of shape [batch, in] and ``W`` of [out, in]."""
    x, W = _as_tensor(x), _as_tensor(W)
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError("linear", x.shape, W.shape)
    out = x.data @ W.data.T
    parents = [x, W]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (W.shape[0],):
            raise ShapeError("linear", W.shape, bias.shape)
        out = out + bias.data
        parents.append(bias)

    def back(g):
        grads = [g @ W.data, g.T @ x.data]
        if bias is not None:
            grads.append(np.sum(g, axis=0))
        return grads

    return _emit("linear", out, parents, back)


# ---------------------------------------------------------------- softmax family


def _stable_softmax(v: np.ndarray) -> np.ndarray:
    z = v - np.max(v, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _stable_logsumexp(v: np.ndarray) -> np.ndarray:
    m = np.max(v, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(v - m), axis=-1, keepdims=True)))[..., 0]


def softmax(v) -> Tensor:
    v = _as_tensor(v)
    if v.data.ndim == 0:
        raise ShapeError("softmax", v.shape)
    p = _stable_softmax(v.data)

    def back(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)

    return _emit("softmax", p, (v,), back)


def logsumexp(v) -> Tensor:
    v = _as_tensor(v)
    if v.data.ndim == 0:
        raise ShapeError("logsumexp", v.shape)
    out = _stable_logsumexp(v.data)
    p = _stable_softmax(v.data)
    return _emit("logsumexp", out, (v,), lambda g: (np.expand_dims(g, -1) * p,))


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of [batch, classes] logits against int labels."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    n = logits.shape[0]
    lse = _stable_logsumexp(logits.data)
    picked = logits.data[np.arange(n), labels]
    out = np.mean(lse - picked)
    p = _stable_softmax(logits.data)

    def back(g):
        d = p.copy()
        d[np.arange(n), labels] -= 1.0
        return (float(g) * d / n,)

    return _emit("cross_entropy", out, (logits,), back)


def mse(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    _same_shape("mse", pred, target)
    n = pred.data.size
    r = pred.data - target.data
    return _emit(
        "mse",
        np.mean(r * r),
        (pred, target),
        lambda g: (2.0 * float(g) * r / n, -2.0 * float(g) * r / n),
    )


# ---------------------------------------------------------------- backward


def backward(graph: Graph, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. every leaf of ``graph``.

    Leaves the loss does not depend on get zero arrays. A leaf used along
    several paths receives the sum of the path gradients.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", loss.shape, ())
    grads: dict[int, np.ndarray] = {}
    if loss.graph is graph:
        grads[id(loss)] = np.ones(loss.shape)
        for node in reversed(graph.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if parent.graph is None or pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.array(pg, dtype=np.float64).reshape(parent.shape)
    return {leaf: grads.get(id(leaf), np.zeros(leaf.shape)) for leaf in graph.leaves}


def finite_diff_check(fn: Callable[[Graph, Tensor], Tensor], point, h: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences.

    ``fn(graph, x)`` must build a scalar loss from the leaf ``x``. The error
    per coordinate is ``|g_ad - g_fd| / max(1, |g_fd|)``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    point = np.array(point, dtype=np.float64)
    g = Graph()
    x = g.leaf(point, kind="alpha")
    loss = fn(g, x)
    _check_finite("finite_diff_check", loss.data)
    g_ad = backward(g, loss)[x]

    def value(p):
        gg = Graph()
        out = fn(gg, gg.leaf(p, kind="alpha")).data
        _check_finite("finite_diff_check", out)
        return float(out)

    flat = point.reshape(-1)
    g_fd = np.zeros(flat.shape)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        g_fd[i] = (value(up.reshape(point.shape)) - value(dn.reshape(point.shape))) / (2.0 * h)
    err = np.abs(g_ad.reshape(-1) - g_fd) / np.maximum(1.0, np.abs(g_fd))
    return float(np.max(err)) if err.size else 0.0
