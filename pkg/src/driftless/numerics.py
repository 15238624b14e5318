"""Dense 2-D linear algebra with a reverse-mode tape.

Every value is a 2-D float64 array. Operations are polymorphic: called on
plain arrays they evaluate eagerly; called on graph nodes they are recorded
as explicit op records on the owning :class:`Graph`, which supports exact
reverse-mode gradients and full re-evaluation (used by finite-difference
gradient checking). Gradient accumulation follows node-index order so
repeated runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, DimensionError

GRAD_CHECK_FLOOR = 1e-8


def as_matrix(x, name: str = "operand") -> np.ndarray:
    """Coerce to a finite 2-D float64 array, raising DimensionError otherwise."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError(f"{name} contains non-finite entries")
    return a


@dataclass
class Node:
    """One record on the tape: an op, its operands, and the cached output."""

    graph: "Graph"
    index: int
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    extra: dict = field(default_factory=dict)
    name: str | None = None
    grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape


class Graph:
    """Acyclic tape of op records over named parameter leaves."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def parameter(self, name: str, value) -> Node:
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name!r}")
        node = self._append("param", (), as_matrix(value, name), name=name)
        self.params[name] = node
        return node

    def constant(self, value) -> Node:
        return self._append("const", (), as_matrix(value, "constant"))

    def _append(self, op, parents, value, extra=None, name=None) -> Node:
        node = Node(self, len(self.nodes), op, parents, value, extra or {}, name)
        self.nodes.append(node)
        return node

    def _lift(self, x) -> Node:
        if isinstance(x, Node):
            if x.graph is not self:
                raise ContractError("operands belong to different graphs")
            return x
        return self.constant(x)

    def record(self, op: str, operands, value: np.ndarray, extra=None) -> Node:
        parents = tuple(self._lift(x).index for x in operands)
        return self._append(op, parents, value, extra)

    def recompute(self) -> None:
        """Re-evaluate every non-leaf node from current leaf values, in index order."""
        for node in self.nodes:
            if node.op in ("param", "const"):
                continue
            args = [self.nodes[i].value for i in node.parents]
            node.value = _FORWARD[node.op](args, node.extra)

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Fill node.grad for all ancestors of ``loss``; return parameter grads."""
        if not isinstance(loss, Node) or loss.graph is not self:
            raise ContractError("loss must be a node of this graph")
        if loss.shape != (1, 1):
            raise ContractError(f"loss must be a 1x1 scalar node, got {loss.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones((1, 1))
        for node in reversed(self.nodes[: loss.index + 1]):
            if node.grad is None or node.op in ("param", "const"):
                continue
            args = [self.nodes[i].value for i in node.parents]
            parent_grads = _VJP[node.op](args, node.extra, node.grad, node.value)
            for pidx, g in zip(node.parents, parent_grads):
                parent = self.nodes[pidx]
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad += g
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.value))
            for name, p in self.params.items()
        }


def _tracked(*xs) -> Graph | None:
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    return None


def _apply(op: str, operands, extra=None):
    g = _tracked(*operands)
    if g is None:
        vals = [as_matrix(x) for x in operands]
        return _FORWARD[op](vals, extra or {})
    nodes = [g._lift(x if isinstance(x, Node) else as_matrix(x)) for x in operands]
    value = _FORWARD[op]([n.value for n in nodes], extra or {})
    return g.record(op, nodes, value, extra)


# ---- op forward/backward definitions ----


def _broadcast_check(a, b):
    if a.shape == b.shape:
        return
    if a.shape[1] == b.shape[1] and (a.shape[0] == 1 or b.shape[0] == 1):
        return
    raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


def _fwd_matmul(args, extra):
    a, b = args
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} x {b.shape}")
    return a @ b


def _vjp_matmul(args, extra, g, out):
    a, b = args
    return [g @ b.T, a.T @ g]


def _fwd_add(args, extra):
    a, b = args
    _broadcast_check(a, b)
    return a + b


def _vjp_add(args, extra, g, out):
    a, b = args
    return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]


def _fwd_sub(args, extra):
    a, b = args
    _broadcast_check(a, b)
    return a - b


def _vjp_sub(args, extra, g, out):
    a, b = args
    return [_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)]


def _fwd_mul(args, extra):
    a, b = args
    _broadcast_check(a, b)
    return a * b


def _vjp_mul(args, extra, g, out):
    a, b = args
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


def _fwd_scale(args, extra):
    return args[0] * extra["s"]


def _vjp_scale(args, extra, g, out):
    return [g * extra["s"]]


def _fwd_transpose(args, extra):
    return args[0].T.copy()


def _vjp_transpose(args, extra, g, out):
    return [g.T.copy()]


def _fwd_tanh(args, extra):
    return np.tanh(args[0])


def _vjp_tanh(args, extra, g, out):
    return [g * (1.0 - out * out)]


def _fwd_softmax_rows(args, extra):
    a = args[0]
    if np.any(np.isnan(a)):
        raise ContractError("softmax_rows input contains NaN")
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _vjp_softmax_rows(args, extra, g, out):
    dot = (g * out).sum(axis=1, keepdims=True)
    return [(g - dot) * out]


def _fwd_layer_norm(args, extra):
    x, gain, bias = args
    if gain.shape != (1, x.shape[1]) or bias.shape != (1, x.shape[1]):
        raise DimensionError(
            f"layer_norm gain/bias must be 1x{x.shape[1]}, got {gain.shape}, {bias.shape}"
        )
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + extra["eps"])
    xhat = (x - mu) * inv
    return xhat * gain + bias


def _vjp_layer_norm(args, extra, g, out):
    x, gain, bias = args
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + extra["eps"])
    xhat = (x - mu) * inv
    ghat = g * gain
    m1 = ghat.mean(axis=1, keepdims=True)
    m2 = (ghat * xhat).mean(axis=1, keepdims=True)
    dx = (ghat - m1 - xhat * m2) * inv
    dgain = (g * xhat).sum(axis=0, keepdims=True)
    dbias = g.sum(axis=0, keepdims=True)
    return [dx, dgain, dbias]


def _fwd_gather_rows(args, extra):
    return args[0][extra["indices"]]


def _vjp_gather_rows(args, extra, g, out):
    da = np.zeros_like(args[0])
    np.add.at(da, extra["indices"], g)
    return [da]


def _fwd_slice_rows(args, extra):
    return args[0][extra["lo"] : extra["hi"]].copy()


def _vjp_slice_rows(args, extra, g, out):
    da = np.zeros_like(args[0])
    da[extra["lo"] : extra["hi"]] = g
    return [da]


def _fwd_slice_cols(args, extra):
    return args[0][:, extra["lo"] : extra["hi"]].copy()


def _vjp_slice_cols(args, extra, g, out):
    da = np.zeros_like(args[0])
    da[:, extra["lo"] : extra["hi"]] = g
    return [da]


def _fwd_concat_rows(args, extra):
    cols = {a.shape[1] for a in args}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows column mismatch: {sorted(cols)}")
    return np.concatenate(args, axis=0)


def _vjp_concat_rows(args, extra, g, out):
    grads, lo = [], 0
    for a in args:
        grads.append(g[lo : lo + a.shape[0]].copy())
        lo += a.shape[0]
    return grads


def _fwd_concat_cols(args, extra):
    rows = {a.shape[0] for a in args}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols row mismatch: {sorted(rows)}")
    return np.concatenate(args, axis=1)


def _vjp_concat_cols(args, extra, g, out):
    grads, lo = [], 0
    for a in args:
        grads.append(g[:, lo : lo + a.shape[1]].copy())
        lo += a.shape[1]
    return grads


def _fwd_sum_all(args, extra):
    return args[0].sum().reshape(1, 1)


def _vjp_sum_all(args, extra, g, out):
    return [np.full_like(args[0], g[0, 0])]


_FORWARD: dict[str, Callable] = {
    "matmul": _fwd_matmul,
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "scale": _fwd_scale,
    "transpose": _fwd_transpose,
    "tanh": _fwd_tanh,
    "softmax_rows": _fwd_softmax_rows,
    "layer_norm": _fwd_layer_norm,
    "gather_rows": _fwd_gather_rows,
    "slice_rows": _fwd_slice_rows,
    "slice_cols": _fwd_slice_cols,
    "concat_rows": _fwd_concat_rows,
    "concat_cols": _fwd_concat_cols,
    "sum_all": _fwd_sum_all,
}

_VJP: dict[str, Callable] = {
    "matmul": _vjp_matmul,
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "scale": _vjp_scale,
    "transpose": _vjp_transpose,
    "tanh": _vjp_tanh,
    "softmax_rows": _vjp_softmax_rows,
    "layer_norm": _vjp_layer_norm,
    "gather_rows": _vjp_gather_rows,
    "slice_rows": _vjp_slice_rows,
    "slice_cols": _vjp_slice_cols,
    "concat_rows": _vjp_concat_rows,
    "concat_cols": _vjp_concat_cols,
    "sum_all": _vjp_sum_all,
}


# ---- public polymorphic operations ----


def matmul(a, b):
    """Matrix product; operands must satisfy a.cols == b.rows."""
    return _apply("matmul", [a, b])


def add(a, b):
    """Elementwise sum; a 1-row operand broadcasts over rows."""
    return _apply("add", [a, b])


def sub(a, b):
    return _apply("sub", [a, b])


def mul(a, b):
    """Elementwise product; a 1-row operand broadcasts over rows."""
    return _apply("mul", [a, b])


def scale(a, s: float):
    return _apply("scale", [a], {"s": float(s)})


def transpose(a):
    return _apply("transpose", [a])


def tanh(a):
    return _apply("tanh", [a])


def softmax_rows(a):
    """Row-wise softmax with per-row max subtraction; each output row sums to 1."""
    return _apply("softmax_rows", [a])


def layer_norm(x, gain, bias, eps: float = 1e-5):
    """Per-row normalization to zero mean / unit variance, then gain and bias."""
    return _apply("layer_norm", [x, gain, bias], {"eps": float(eps)})


def gather_rows(a, indices):
    """Select rows of ``a`` by integer index; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError(f"gather_rows indices must be 1-D, got {idx.shape}")
    return _apply("gather_rows", [a], {"indices": idx})


def slice_rows(a, lo: int, hi: int):
    return _apply("slice_rows", [a], {"lo": int(lo), "hi": int(hi)})


def slice_cols(a, lo: int, hi: int):
    return _apply("slice_cols", [a], {"lo": int(lo), "hi": int(hi)})


def concat_rows(xs):
    return _apply("concat_rows", list(xs))


def concat_cols(xs):
    return _apply("concat_cols", list(xs))


def sum_all(a):
    """Sum of all entries as a 1x1 matrix."""
    return _apply("sum_all", [a])


def value_of(x) -> np.ndarray:
    """Underlying array of a node or array."""
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def grad_check(graph: Graph, loss: Node, perturbation: float = 1e-4) -> float:
    """Max relative error between tape gradients and central differences.

    Perturbs every entry of every parameter by +/- ``perturbation``, re-runs
    the recorded graph, and compares the finite-difference slope against the
    analytic gradient. The relative error denominator is floored at 1e-8.
    """
    if not (0.0 < perturbation <= 1e-3):
        raise ContractError(f"perturbation must be in (0, 1e-3], got {perturbation}")
    if loss.shape != (1, 1):
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    analytic = graph.backward(loss)
    worst = 0.0
    for name, pnode in graph.params.items():
        w = pnode.value
        g = analytic[name]
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                orig = w[i, j]
                w[i, j] = orig + perturbation
                graph.recompute()
                plus = loss.value[0, 0]
                w[i, j] = orig - perturbation
                graph.recompute()
                minus = loss.value[0, 0]
                w[i, j] = orig
                fd = (plus - minus) / (2.0 * perturbation)
                denom = max(abs(g[i, j]), abs(fd), GRAD_CHECK_FLOOR)
                worst = max(worst, abs(g[i, j] - fd) / denom)
    graph.recompute()
    return worst
