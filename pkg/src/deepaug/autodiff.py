"""Tape-based reverse-mode automatic differentiation over dense float tensors.

A :class:`Graph` is an append-only tape. Tensors created through
:meth:`Graph.leaf` (or produced by an op with at least one graph input) carry a
node id into that tape; tensors without a graph are constants. A graph is meant
to live for one training step and then be dropped.

    g = Graph()
    x = g.leaf([[1.0, -2.0]])
    y = sum_(relu(x))
    grads = g.backward(y)
    grads.of(x)        # -> [[1., 0.]]
"""
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, DimensionError


class Tensor:
    __slots__ = ("data", "graph", "node")

    def __init__(self, data, graph=None, node=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, (np.ndarray, np.floating)) and data.dtype.kind == "f" else np.float32
        self.data = np.asarray(data, dtype=dtype)
        self.graph = graph
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def requires_grad(self):
        return self.graph is not None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", node={self.node}" if self.graph is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(_wrap(other, self), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


@dataclass
class Node:
    kind: str
    inputs: tuple  # node id per input, None for constants
    values: tuple  # forward values of the inputs
    out: np.ndarray
    attrs: dict = field(default_factory=dict)


class GradMap(dict):
    """node-id -> gradient array. Missing entries are semantically zero."""

    def of(self, t: Tensor) -> np.ndarray:
        g = self.get(t.node) if t.node is not None else None
        return np.zeros_like(t.data) if g is None else g


class Graph:
    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []

    def leaf(self, value) -> Tensor:
        data = np.array(value.data if isinstance(value, Tensor) else value, dtype=self.dtype)
        return self._record("leaf", (), (), data, {})

    def _record(self, kind, inputs, values, out, attrs) -> Tensor:
        nid = len(self.nodes)
        self.nodes.append(Node(kind, tuple(inputs), tuple(values), out, attrs))
        return Tensor(out, graph=self, node=nid)

    def backward(self, root: Tensor) -> GradMap:
        if root.graph is not self:
            raise ContractError("backward: root does not belong to this graph")
        if root.data.size != 1:
            raise ContractError(f"backward: root must be scalar-shaped, got shape {root.shape}")
        grads = GradMap()
        grads[root.node] = np.ones_like(root.data)
        for nid in range(root.node, -1, -1):
            g = grads.get(nid)
            node = self.nodes[nid]
            if g is None or not node.inputs:
                continue
            contribs = _BACKWARD[node.kind](node, g)
            for src, c in zip(node.inputs, contribs):
                if src is None or c is None:
                    continue
                prev = grads.get(src)
                grads[src] = c if prev is None else prev + c
        return grads


def _wrap(x, like: Tensor = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(x), dtype=dtype)


def forward_op(kind: str, inputs, **attrs) -> Tensor:
    """Run op ``kind`` on ``inputs`` and record it on the inputs' graph, if any."""
    if kind not in _FORWARD:
        raise ContractError(f"unknown op kind {kind!r}")
    first = next((t for t in inputs if isinstance(t, Tensor)), None)
    ts = [_wrap(t, first) for t in inputs]
    dtype = ts[0].data.dtype
    graph = None
    for t in ts:
        if t.graph is not None:
            if graph is not None and t.graph is not graph:
                raise ContractError(f"{kind}: inputs belong to different graphs")
            graph = t.graph
    values = tuple(t.data if t.data.dtype == dtype else t.data.astype(dtype) for t in ts)
    out = np.asarray(_FORWARD[kind](values, attrs), dtype=dtype)
    if graph is None:
        return Tensor(out, dtype=dtype)
    return graph._record(kind, [t.node for t in ts], values, out, attrs)


# --- forward rules ---------------------------------------------------------

def _check_2d(op, *arrays):
    for a in arrays:
        if a.ndim != 2:
            raise DimensionError(op, *(x.shape for x in arrays), detail="expected 2-D operands")


def _f_matmul(v, attrs):
    a, b = v
    _check_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)
    return a @ b


def _f_add(v, attrs):
    a, b = v
    if a.shape == b.shape:
        return a + b
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return a + b
    raise DimensionError("add", a.shape, b.shape)


def _f_mul(v, attrs):
    a, b = v
    if a.shape != b.shape:
        raise DimensionError("mul", a.shape, b.shape)
    return a * b


def _f_relu(v, attrs):
    (x,) = v
    return np.where(x > 0, x, np.zeros_like(x))


def _f_sum(v, attrs):
    (x,) = v
    return np.asarray(x.sum(axis=attrs["axis"]), dtype=x.dtype)


def _f_mean(v, attrs):
    (x,) = v
    return np.asarray(x.mean(axis=attrs["axis"]), dtype=x.dtype)


def _f_scale(v, attrs):
    (x,) = v
    return x * x.dtype.type(attrs["c"])


def _f_exp(v, attrs):
    return np.exp(v[0])


def _f_log(v, attrs):
    (x,) = v
    if np.any(x <= 0):
        raise ContractError("log: input must be strictly positive")
    return np.log(x)


NORM_EPS = 1e-12


def _row_norms(x):
    # clamped so an all-zero row (e.g. fully dropped) maps to zero instead of NaN
    return np.maximum(np.sqrt((x * x).sum(axis=1, keepdims=True)), x.dtype.type(NORM_EPS))


def _f_l2norm(v, attrs):
    (x,) = v
    _check_2d("l2_normalize_rows", x)
    return x / _row_norms(x)


def _f_concat(v, attrs):
    for a in v:
        if a.ndim != 2 or a.shape[1] != v[0].shape[1]:
            raise DimensionError("concat_rows", *(a.shape for a in v))
    return np.concatenate(v, axis=0)


def _f_slice(v, attrs):
    (x,) = v
    start, stop = attrs["start"], attrs["stop"]
    if not 0 <= start < stop <= x.shape[0]:
        raise DimensionError("slice_rows", x.shape, detail=f"rows [{start}, {stop})")
    return x[start:stop].copy()


def _f_transpose(v, attrs):
    _check_2d("transpose", v[0])
    return np.ascontiguousarray(v[0].T)


def _f_stop(v, attrs):
    (x,) = v
    mask = attrs["mask"]
    if x.ndim == 0 or mask.shape != (x.shape[0],):
        raise DimensionError("stop_gradient", x.shape, mask.shape, detail="mask length must equal batch size")
    return x


_FORWARD = {
    "matmul": _f_matmul,
    "add": _f_add,
    "mul": _f_mul,
    "relu": _f_relu,
    "sum": _f_sum,
    "mean": _f_mean,
    "scale": _f_scale,
    "exp": _f_exp,
    "log": _f_log,
    "l2_normalize_rows": _f_l2norm,
    "concat_rows": _f_concat,
    "slice_rows": _f_slice,
    "transpose": _f_transpose,
    "stop_gradient": _f_stop,
}


# --- backward rules --------------------------------------------------------
# Each takes (node, grad_of_output) and returns one contribution per input.

def _b_matmul(n, g):
    a, b = n.values
    return g @ b.T, a.T @ g


def _b_add(n, g):
    a, b = n.values
    return g, (g if b.shape == a.shape else g.sum(axis=0))


def _b_mul(n, g):
    a, b = n.values
    return g * b, g * a


def _b_relu(n, g):
    return (np.where(n.values[0] > 0, g, np.zeros_like(g)),)


def _expand_reduced(n, g):
    x = n.values[0]
    axis = n.attrs["axis"]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, x.shape)


def _b_sum(n, g):
    return (np.array(_expand_reduced(n, g)),)


def _b_mean(n, g):
    x = n.values[0]
    axis = n.attrs["axis"]
    count = x.size if axis is None else x.shape[axis]
    return (_expand_reduced(n, g) / x.dtype.type(count),)


def _b_scale(n, g):
    return (g * g.dtype.type(n.attrs["c"]),)


def _b_exp(n, g):
    return (g * n.out,)


def _b_log(n, g):
    return (g / n.values[0],)


def _b_l2norm(n, g):
    x = n.values[0]
    y = n.out
    norms = _row_norms(x)
    # rows at the clamp are treated as a constant zero output
    live = norms > x.dtype.type(NORM_EPS)
    return (np.where(live, (g - y * (g * y).sum(axis=1, keepdims=True)) / norms, 0).astype(x.dtype),)


def _b_concat(n, g):
    out, start = [], 0
    for v in n.values:
        out.append(g[start:start + v.shape[0]])
        start += v.shape[0]
    return tuple(out)


def _b_slice(n, g):
    full = np.zeros_like(n.values[0])
    full[n.attrs["start"]:n.attrs["stop"]] = g
    return (full,)


def _b_transpose(n, g):
    return (np.ascontiguousarray(g.T),)


def _b_stop(n, g):
    mask = n.attrs["mask"]
    if not mask.any():
        return (g,)
    g = g.copy()
    g[mask] = 0
    return (g,)


_BACKWARD = {
    "matmul": _b_matmul,
    "add": _b_add,
    "mul": _b_mul,
    "relu": _b_relu,
    "sum": _b_sum,
    "mean": _b_mean,
    "scale": _b_scale,
    "exp": _b_exp,
    "log": _b_log,
    "l2_normalize_rows": _b_l2norm,
    "concat_rows": _b_concat,
    "slice_rows": _b_slice,
    "transpose": _b_transpose,
    "stop_gradient": _b_stop,
}

OP_KINDS = tuple(_FORWARD)


# --- public op wrappers ----------------------------------------------------

def matmul(a, b):
    return forward_op("matmul", [a, b])


def add(a, b):
    """Elementwise add; ``b`` may also be a bias vector broadcast over rows of ``a``."""
    return forward_op("add", [a, b])


def mul(a, b):
    return forward_op("mul", [a, b])


def relu(x):
    """ReLU with subgradient 0 at 0."""
    return forward_op("relu", [x])


def sum_(x, axis=None):
    return forward_op("sum", [x], axis=axis)


def mean(x, axis=None):
    return forward_op("mean", [x], axis=axis)


def scale(x, c: float):
    return forward_op("scale", [x], c=float(c))


def exp(x):
    return forward_op("exp", [x])


def log(x):
    return forward_op("log", [x])


def l2_normalize_rows(x):
    return forward_op("l2_normalize_rows", [x])


def concat_rows(xs):
    return forward_op("concat_rows", list(xs))


def slice_rows(x, start: int, stop: int):
    return forward_op("slice_rows", [x], start=int(start), stop=int(stop))


def transpose(x):
    return forward_op("transpose", [x])


def stop_gradient(x, mask) -> Tensor:
    """Identity forward; rows where ``mask`` is true receive zero gradient."""
    mask = np.asarray(mask, dtype=bool)
    return forward_op("stop_gradient", [x], mask=mask)


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-3, dtype=np.float64) -> float:
    """Max relative error between the tape gradient of ``f`` and central differences.

    Both routes run in ``dtype`` (float64 by default) so the comparison tests the
    backward rules rather than float32 round-off. The relative error per
    coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if eps <= 0:
        raise ContractError("grad_check: eps must be positive")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=dtype)

    g = Graph(dtype)
    xt = g.leaf(x0)
    y = f(xt)
    analytic = g.backward(y).of(xt).astype(np.float64)

    def value(arr):
        return float(np.asarray(f(Tensor(arr, dtype=dtype)).data, dtype=np.float64).reshape(-1)[0])

    base = value(x0)
    if base != float(np.asarray(y.data).reshape(-1)[0]):
        raise ContractError("grad_check: f is not deterministic (two forward evaluations differ)")

    numeric = np.zeros(x0.shape)
    for idx in np.ndindex(*x0.shape):
        xp = x0.copy()
        xp[idx] += eps
        xm = x0.copy()
        xm[idx] -= eps
        numeric[idx] = (value(xp) - value(xm)) / (2 * eps)
    rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(rel.max()) if rel.size else 0.0
