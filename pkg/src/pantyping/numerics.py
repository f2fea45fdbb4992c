"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

A :class:`Graph` is an append-only tape.  Every operation appends one node
holding its output value; :meth:`Graph.backward` walks the tape in reverse and
accumulates gradients.  Backward rules live in the module-level ``BACKWARD``
table keyed by operation kind, so tests can swap a rule out (mutation tests
for the gradient checker).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operation inputs do not conform to the operation kind."""


class GraphError(RuntimeError):
    """Misuse of the tape (bad loss node, repeated backward, ...)."""


def _shape_error(kind, *arrays):
    shapes = ", ".join(str(a.shape) for a in arrays)
    return ShapeError(f"{kind}: incompatible input shapes {shapes}")


@dataclass
class _Record:
    kind: str
    inputs: tuple
    value: np.ndarray
    ctx: dict = field(default_factory=dict)
    name: str | None = None


class Node:
    __slots__ = ("graph", "id")

    def __init__(self, graph: "Graph", idx: int):
        self.graph = graph
        self.id = idx

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.id].value

    @property
    def shape(self):
        return self.graph.nodes[self.id].value.shape

    @property
    def grad(self) -> np.ndarray | None:
        return self.graph.grads.get(self.id)

    def __repr__(self):
        rec = self.graph.nodes[self.id]
        return f"Node({self.id}, {rec.kind}, shape={rec.value.shape})"


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def stable_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(x):
    """log(sigmoid(x)) without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


class Graph:
    def __init__(self):
        self.nodes: list[_Record] = []
        self.grads: dict[int, np.ndarray] = {}
        self._backward_done = False

    # ------------------------------------------------------------ leaves

    def _append(self, kind, inputs, value, ctx=None, name=None) -> Node:
        if self._backward_done:
            raise GraphError("graph already differentiated; build a new one")
        self.nodes.append(_Record(kind, tuple(n.id for n in inputs), value, ctx or {}, name))
        return Node(self, len(self.nodes) - 1)

    def param(self, array: np.ndarray, name: str | None = None) -> Node:
        """Leaf whose gradient is reported. The array is not copied."""
        if array.dtype != np.float64:
            raise TypeError(f"param {name!r} must be float64, got {array.dtype}")
        return self._append("param", (), array, name=name)

    def const(self, array) -> Node:
        return self._append("const", (), np.asarray(array, dtype=np.float64))

    # ------------------------------------------------------------ ops

    def add(self, a: Node, b: Node) -> Node:
        try:
            out = a.value + b.value
        except ValueError:
            raise _shape_error("add", a.value, b.value) from None
        return self._append("add", (a, b), out)

    def mul(self, a: Node, b: Node) -> Node:
        try:
            out = a.value * b.value
        except ValueError:
            raise _shape_error("mul", a.value, b.value) from None
        return self._append("mul", (a, b), out)

    def matvec(self, m: Node, v: Node) -> Node:
        M, x = m.value, v.value
        if M.ndim != 2 or x.ndim != 1 or M.shape[1] != x.shape[0]:
            raise _shape_error("matvec", M, x)
        return self._append("matvec", (m, v), M @ x)

    def matmul(self, a: Node, b: Node) -> Node:
        A, B = a.value, b.value
        if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
            raise _shape_error("matmul", A, B)
        return self._append("matmul", (a, b), A @ B)

    def transpose(self, a: Node) -> Node:
        if a.value.ndim != 2:
            raise _shape_error("transpose", a.value)
        return self._append("transpose", (a,), a.value.T.copy())

    def dot(self, a: Node, b: Node) -> Node:
        x, y = a.value, b.value
        if x.ndim != 1 or x.shape != y.shape:
            raise _shape_error("dot", x, y)
        return self._append("dot", (a, b), np.asarray(x @ y))

    def sum(self, a: Node, axis: int | None = None) -> Node:
        return self._append("sum", (a,), np.asarray(a.value.sum(axis=axis)), {"axis": axis})

    def mean(self, a: Node, axis: int | None = None) -> Node:
        return self._append("mean", (a,), np.asarray(a.value.mean(axis=axis)), {"axis": axis})

    def tanh(self, a: Node) -> Node:
        return self._append("tanh", (a,), np.tanh(a.value))

    def sigmoid(self, a: Node) -> Node:
        return self._append("sigmoid", (a,), stable_sigmoid(a.value))

    def exp(self, a: Node) -> Node:
        return self._append("exp", (a,), np.exp(a.value))

    def log_clamped(self, a: Node, floor: float = LOG_FLOOR) -> Node:
        clamped = np.maximum(a.value, floor)
        return self._append("log_clamped", (a,), np.log(clamped), {"floor": floor})

    def softmax(self, a: Node, axis: int = -1) -> Node:
        if a.value.size == 0:
            raise _shape_error("softmax", a.value)
        return self._append("softmax", (a,), softmax(a.value, axis=axis), {"axis": axis})

    def embed(self, table: Node, ids) -> Node:
        ids = np.asarray(ids, dtype=np.int64)
        E = table.value
        if E.ndim != 2 or ids.ndim != 1 or (ids.size and (ids.min() < 0 or ids.max() >= E.shape[0])):
            raise ShapeError(f"embed: ids out of range for table {E.shape}")
        return self._append("embed", (table,), E[ids], {"ids": ids})

    def concat(self, parts: list[Node]) -> Node:
        if any(p.value.ndim != 1 for p in parts):
            raise _shape_error("concat", *(p.value for p in parts))
        sizes = [p.value.shape[0] for p in parts]
        return self._append("concat", parts, np.concatenate([p.value for p in parts]), {"sizes": sizes})

    def stack(self, rows: list[Node]) -> Node:
        if not rows:
            raise ShapeError("stack: no rows")
        first = rows[0].value.shape
        if any(r.value.shape != first or r.value.ndim != 1 for r in rows):
            raise _shape_error("stack", *(r.value for r in rows))
        return self._append("stack", rows, np.stack([r.value for r in rows]))

    def lstm(self, x: Node, w: Node, b: Node) -> Node:
        """Final hidden state of an LSTM run over the rows of ``x`` from zero state."""
        X, W, B = x.value, w.value, b.value
        if X.ndim != 2 or W.ndim != 2 or B.ndim != 1 or W.shape[0] % 4 or B.shape[0] != W.shape[0] \
                or W.shape[1] != X.shape[1] + W.shape[0] // 4 or X.shape[0] < 1:
            raise _shape_error("lstm", X, W, B)
        dh = W.shape[0] // 4
        X = np.ascontiguousarray(X)
        H, C, G = kernels.lstm_forward(X, W, B, np.zeros(dh), np.zeros(dh))
        return self._append("lstm", (x, w, b), H[-1].copy(), {"H": H, "C": C, "G": G})

    def path_product(self, table: Node, idx: np.ndarray, lengths: np.ndarray) -> Node:
        """Row t = elementwise product of ``table[idx[t, :lengths[t]]]``."""
        E = table.value
        if E.ndim != 2 or idx.ndim != 2 or idx.shape[0] != lengths.shape[0]:
            raise ShapeError(f"path_product: table {E.shape}, idx {idx.shape}, lengths {lengths.shape}")
        out = kernels.path_product_forward(E, idx, lengths)
        return self._append("path_product", (table,), out, {"idx": idx, "lengths": lengths})

    def bce_logits(self, logits: Node, targets, weights=None) -> Node:
        """Summed binary cross-entropy with probabilities clamped to [floor, 1 - floor].

        ``weights`` optionally scales each term (a 0/1 mask restricts the sum).
        """
        z = logits.value
        y = np.asarray(targets, dtype=np.float64)
        w = np.ones_like(z) if weights is None else np.asarray(weights, dtype=np.float64)
        if z.shape != y.shape or z.ndim != 1 or w.shape != z.shape:
            raise _shape_error("bce_logits", z, y, w)
        log_p = log_sigmoid(z)
        log_q = log_sigmoid(-z)
        lo, hi = np.log(LOG_FLOOR), np.log1p(-LOG_FLOOR)
        clip_p = (log_p < lo) | (log_p > hi)
        clip_q = (log_q < lo) | (log_q > hi)
        log_p = np.clip(log_p, lo, hi)
        log_q = np.clip(log_q, lo, hi)
        loss = -(w * (y * log_p + (1.0 - y) * log_q)).sum()
        ctx = {"y": y, "w": w, "clip_p": clip_p, "clip_q": clip_q}
        return self._append("bce_logits", (logits,), np.asarray(loss), ctx)

    # ------------------------------------------------------------ backward

    def backward(self, loss: Node) -> dict[int, np.ndarray]:
        if not self.nodes:
            raise GraphError("backward called before any forward operation")
        if self._backward_done:
            raise GraphError("backward already ran on this graph")
        rec = self.nodes[loss.id]
        if rec.value.size != 1:
            raise GraphError(f"loss must be scalar, got shape {rec.value.shape}")

        reachable = np.zeros(loss.id + 1, dtype=bool)
        reachable[loss.id] = True
        for i in range(loss.id, -1, -1):
            if reachable[i]:
                for j in self.nodes[i].inputs:
                    reachable[j] = True
        grads = {i: np.zeros_like(self.nodes[i].value) for i in np.flatnonzero(reachable)}
        grads[loss.id] = np.ones_like(rec.value)

        for i in range(loss.id, -1, -1):
            if not reachable[i]:
                continue
            node = self.nodes[i]
            if not node.inputs:
                continue
            in_vals = [self.nodes[j].value for j in node.inputs]
            in_grads = BACKWARD[node.kind](in_vals, node.value, node.ctx, grads[i])
            for j, g in zip(node.inputs, in_grads):
                if g is not None:
                    grads[j] += g
        self.grads = grads
        self._backward_done = True
        return grads

    def param_grads(self) -> dict[str, np.ndarray]:
        """Gradients of named parameter leaves (zeros when unreachable)."""
        out = {}
        for i, rec in enumerate(self.nodes):
            if rec.kind == "param" and rec.name is not None:
                out[rec.name] = self.grads.get(i, np.zeros_like(rec.value))
        return out


# ---------------------------------------------------------------- backward rules


def _b_add(ins, out, ctx, g):
    return _unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)


def _b_mul(ins, out, ctx, g):
    a, b = ins
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _b_matvec(ins, out, ctx, g):
    M, x = ins
    return np.outer(g, x), M.T @ g


def _b_matmul(ins, out, ctx, g):
    A, B = ins
    return g @ B.T, A.T @ g


def _b_transpose(ins, out, ctx, g):
    return (g.T,)


def _b_dot(ins, out, ctx, g):
    x, y = ins
    return g * y, g * x


def _b_sum(ins, out, ctx, g):
    (a,) = ins
    axis = ctx["axis"]
    if axis is None:
        return (np.broadcast_to(g, a.shape).copy(),)
    return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)


def _b_mean(ins, out, ctx, g):
    (a,) = ins
    axis = ctx["axis"]
    count = a.size if axis is None else a.shape[axis]
    return (_b_sum(ins, out, ctx, g)[0] / count,)


def _b_tanh(ins, out, ctx, g):
    return (g * (1.0 - out * out),)


def _b_sigmoid(ins, out, ctx, g):
    return (g * out * (1.0 - out),)


def _b_exp(ins, out, ctx, g):
    return (g * out,)


def _b_log_clamped(ins, out, ctx, g):
    (a,) = ins
    floor = ctx["floor"]
    live = a > floor
    return (np.where(live, g / np.maximum(a, floor), 0.0),)


def _b_softmax(ins, out, ctx, g):
    axis = ctx["axis"]
    inner = (g * out).sum(axis=axis, keepdims=True)
    return (out * (g - inner),)


def _b_embed(ins, out, ctx, g):
    (E,) = ins
    dE = np.zeros_like(E)
    np.add.at(dE, ctx["ids"], g)
    return (dE,)


def _b_concat(ins, out, ctx, g):
    return tuple(np.split(g, np.cumsum(ctx["sizes"])[:-1]))


def _b_stack(ins, out, ctx, g):
    return tuple(g[i].copy() for i in range(g.shape[0]))


def _b_lstm(ins, out, ctx, g):
    X, W, _ = ins
    dX, dW, db = kernels.lstm_backward(np.ascontiguousarray(X), W, ctx["H"], ctx["C"], ctx["G"],
                                       np.ascontiguousarray(g))
    return dX, dW, db


def _b_path_product(ins, out, ctx, g):
    (E,) = ins
    return (kernels.path_product_backward(E, ctx["idx"], ctx["lengths"], np.ascontiguousarray(g)),)


def _b_bce_logits(ins, out, ctx, g):
    (z,) = ins
    y = ctx["y"]
    # d(-log sigmoid(z))/dz = sigmoid(z) - 1, d(-log sigmoid(-z))/dz = sigmoid(z)
    p = stable_sigmoid(z)
    dz = -y * np.where(ctx["clip_p"], 0.0, 1.0 - p) + (1.0 - y) * np.where(ctx["clip_q"], 0.0, p)
    return (g * ctx["w"] * dz,)


BACKWARD: dict[str, Callable] = {
    "add": _b_add,
    "mul": _b_mul,
    "matvec": _b_matvec,
    "matmul": _b_matmul,
    "transpose": _b_transpose,
    "dot": _b_dot,
    "sum": _b_sum,
    "mean": _b_mean,
    "tanh": _b_tanh,
    "sigmoid": _b_sigmoid,
    "exp": _b_exp,
    "log_clamped": _b_log_clamped,
    "softmax": _b_softmax,
    "embed": _b_embed,
    "concat": _b_concat,
    "stack": _b_stack,
    "lstm": _b_lstm,
    "path_product": _b_path_product,
    "bce_logits": _b_bce_logits,
}


# ---------------------------------------------------------------- finite differences


@dataclass
class GroupCheck:
    name: str
    checked: int
    worst_error: float
    worst_index: tuple
    analytic: float
    numeric: float
    passed: bool


@dataclass
class GradCheckReport:
    groups: list[GroupCheck]
    tol: float
    eps: float

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.groups)

    def __str__(self):
        lines = [f"gradcheck eps={self.eps:g} tol={self.tol:g}: {'PASS' if self.passed else 'FAIL'}"]
        for g in self.groups:
            lines.append(
                f"  {g.name:<12} n={g.checked:<5d} worst={g.worst_error:.3e} at {g.worst_index} "
                f"(analytic {g.analytic:+.6e}, numeric {g.numeric:+.6e}) {'ok' if g.passed else 'FAIL'}"
            )
        return "\n".join(lines)


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(1.0, abs(analytic) + abs(numeric))


def check_gradients(loss_fn: Callable[[], float], arrays: dict[str, np.ndarray],
                    analytic: dict[str, np.ndarray], eps: float = 1e-5, tol: float = 1e-4,
                    max_coords: int = 10_000, rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare ``analytic`` gradients to central differences of ``loss_fn``.

    ``loss_fn`` must read the arrays in ``arrays`` (which are perturbed in
    place and restored). All coordinates are probed when the total count is
    below ``max_coords``; otherwise each group is sampled proportionally.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = rng or np.random.default_rng(0)
    total = sum(a.size for a in arrays.values())
    groups = []
    for name, arr in arrays.items():
        grad = analytic[name]
        if grad.shape != arr.shape:
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, parameter {arr.shape}")
        flat_ids = np.arange(arr.size)
        if total > max_coords:
            k = max(1, int(round(max_coords * arr.size / total)))
            flat_ids = np.sort(rng.choice(arr.size, size=min(k, arr.size), replace=False))
        worst = GroupCheck(name, len(flat_ids), 0.0, (), 0.0, 0.0, True)
        for flat in flat_ids:
            index = np.unravel_index(flat, arr.shape)
            old = arr[index]
            arr[index] = old + eps
            up = loss_fn()
            arr[index] = old - eps
            down = loss_fn()
            arr[index] = old
            if not (np.isfinite(up) and np.isfinite(down)):
                worst = GroupCheck(name, len(flat_ids), float("inf"), tuple(int(i) for i in index),
                                   float(grad[index]), float("nan"), False)
                break
            numeric = (up - down) / (2.0 * eps)
            err = relative_error(grad[index], numeric)
            if err >= worst.worst_error:
                worst = GroupCheck(name, len(flat_ids), err, tuple(int(i) for i in index),
                                   float(grad[index]), float(numeric), True)
        worst.passed = bool(worst.worst_error <= tol)
        groups.append(worst)
    return GradCheckReport(groups, tol, eps)
