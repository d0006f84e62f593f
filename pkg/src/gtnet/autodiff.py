"""Define-by-run reverse-mode differentiation over the GTN op set.

A :class:`Tape` records each op as it executes. Sparse nodes hold a
:class:`CsrMatrix`; their gradients are arrays aligned with the node's stored
values, so a gradient never leaves the sparsity pattern of its operand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .sparse import csr as S
from .sparse import dense as Dn
from .sparse.csr import CombinePlan, CsrMatrix, ShapeError


class UnsupportedOp(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    value: Any
    requires_grad: bool
    saved: dict = field(default_factory=dict)


def _spmm_ss_forward(a, b, prune=0.0):
    # symbolic pattern keeps adjoints exact when values cancel
    if prune > 0:
        return S.spmm_ss(a, b, prune=prune)
    return S.spmm_ss(a, b, drop_zeros=False)


def _row_normalize_forward(a: CsrMatrix, mode: str):
    deg = S.row_degrees(a)
    rows = a.row_ids()
    if mode == "inverse":
        inv = S._safe_inverse(deg)
        return a.with_values(a.values * inv[rows]), {"inv": inv, "rows": rows}
    s = S._safe_inverse(deg, 0.5)
    if a.n_rows != a.n_cols:
        raise ShapeError("symmetric normalization needs a square matrix")
    return (a.with_values(a.values * s[rows] * s[a.col_indices]),
            {"s": s, "rows": rows})


def _cross_entropy(logits: np.ndarray, labels: np.ndarray, index: np.ndarray):
    z = logits[index]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(index)), labels].mean(), logp


class Tape:
    """Append-only op record; node ids are positions in ``nodes``."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.parameters: dict[str, int] = {}

    # -- recording ------------------------------------------------------

    def _push(self, kind, inputs, value, saved=None, requires_grad=None) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"input node {i} is not on the tape")
        if requires_grad is None:
            requires_grad = any(self.nodes[i].requires_grad for i in inputs)
        self.nodes.append(Node(kind, tuple(inputs), value, requires_grad, saved or {}))
        return len(self.nodes) - 1

    def value(self, node_id: int):
        return self.nodes[node_id].value

    def param(self, name: str, value) -> int:
        if name in self.parameters:
            raise ValueError(f"parameter {name!r} already registered")
        node = self._push("param", (), np.array(value, dtype=np.float64), requires_grad=True)
        self.parameters[name] = node
        return node

    def leaf(self, value) -> int:
        """Unnamed differentiable input (dense array or CsrMatrix); reachable via ``vjp``."""
        if not isinstance(value, CsrMatrix):
            value = np.array(value, dtype=np.float64)
        return self._push("leaf", (), value, requires_grad=True)

    def const(self, value) -> int:
        if not isinstance(value, CsrMatrix):
            value = np.asarray(value, dtype=np.float64)
        return self._push("const", (), value, requires_grad=False)

    def record(self, kind: str, inputs, **attrs) -> int:
        """Execute op ``kind`` on existing nodes and append it to the tape."""
        fwd = _FORWARD.get(kind)
        if fwd is None:
            raise UnsupportedOp(f"unsupported op kind {kind!r}")
        inputs = tuple(inputs)
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"input node {i} is not on the tape")
        vals = [self.nodes[i].value for i in inputs]
        value, saved = fwd(vals, attrs)
        saved.update(attrs)
        return self._push(kind, inputs, value, saved)

    # thin wrappers so model code reads like math
    def softmax(self, x):
        return self.record("softmax", [x])

    def select(self, x, index):
        return self.record("select", [x], index=index)

    def convex_combine(self, alpha, plan: CombinePlan):
        return self.record("convex_combine", [alpha], plan=plan)

    def spmm_ss(self, a, b, prune: float = 0.0):
        return self.record("spmm_ss", [a, b], prune=prune)

    def row_normalize(self, a, mode="inverse", detach_degrees=False):
        return self.record("row_normalize", [a], mode=mode, detach_degrees=detach_degrees)

    def add_identity(self, a):
        return self.record("add_identity", [a])

    def spmm_sd(self, a, x):
        return self.record("spmm_sd", [a, x])

    def matmul(self, a, b):
        return self.record("matmul", [a, b])

    def add_bias(self, x, b):
        return self.record("add_bias", [x, b])

    def relu(self, x):
        return self.record("relu", [x])

    def concat_cols(self, xs):
        return self.record("concat_cols", list(xs))

    def cross_entropy(self, logits, labels, index):
        return self.record("cross_entropy", [logits],
                           labels=np.asarray(labels, dtype=np.int64),
                           index=np.asarray(index, dtype=np.int64))

    def sum(self, x):
        return self.record("sum", [x])

    def sum_squares(self, x):
        return self.record("sum_squares", [x])

    # -- reverse pass ---------------------------------------------------

    def vjp(self, node_id: int, cotangent) -> dict[int, Any]:
        """Pull ``cotangent`` back from ``node_id`` to every upstream node."""
        grads: dict[int, Any] = {node_id: cotangent}
        for nid in range(node_id, -1, -1):
            g = grads.get(nid)
            node = self.nodes[nid]
            if g is None or not node.requires_grad or node.kind in ("param", "leaf", "const"):
                continue
            in_vals = [self.nodes[i].value for i in node.inputs]
            need = [self.nodes[i].requires_grad for i in node.inputs]
            in_grads = _BACKWARD[node.kind](g, in_vals, node.value, node.saved, need)
            for i, gi in zip(node.inputs, in_grads):
                if gi is None or not self.nodes[i].requires_grad:
                    continue
                if i in grads:
                    grads[i] = grads[i] + gi
                else:
                    grads[i] = gi
        return grads

    def backward(self, loss_node: int) -> dict[str, np.ndarray]:
        """Gradients of a scalar node w.r.t. every registered parameter."""
        loss = np.asarray(self.nodes[loss_node].value)
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        raw = self.vjp(loss_node, np.ones_like(loss))
        out = {}
        for name, nid in self.parameters.items():
            g = raw.get(nid)
            if g is None:
                g = np.zeros_like(self.nodes[nid].value)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
            out[name] = g
        return out


Gradients = dict


# -- forward rules: (input values, attrs) -> (value, saved) -----------------

def _fwd_softmax(v, a):
    return Dn.row_softmax(v[0]), {}


def _fwd_select(v, a):
    return np.array(v[0][a["index"]]), {"shape": v[0].shape}


def _fwd_convex_combine(v, a):
    plan: CombinePlan = a["plan"]
    alpha = v[0]
    if alpha.shape != (len(plan.mats),):
        raise ShapeError(f"alpha shape {alpha.shape} for {len(plan.mats)} matrices")
    return plan.combine(alpha), {}


def _fwd_spmm_ss(v, a):
    return _spmm_ss_forward(v[0], v[1], a.get("prune", 0.0)), {}


def _fwd_row_normalize(v, a):
    if v[0].nnz and v[0].values.min() < 0:
        raise S.DomainError("row_normalize requires nonnegative entries")
    return _row_normalize_forward(v[0], a.get("mode", "inverse"))


def _fwd_add_identity(v, a):
    m = v[0]
    if m.n_rows != m.n_cols:
        raise ShapeError("add_identity needs a square matrix")
    plan = CombinePlan([m, CsrMatrix.identity(m.n_rows)])
    return plan.combine([1.0, 1.0]), {"pos": plan.positions[0]}


def _fwd_spmm_sd(v, a):
    return S.spmm_sd(v[0], v[1]), {}


def _fwd_matmul(v, a):
    return Dn.matmul(v[0], v[1]), {}


def _fwd_add_bias(v, a):
    return Dn.add_bias(v[0], v[1]), {}


def _fwd_relu(v, a):
    return Dn.relu(v[0]), {}


def _fwd_concat(v, a):
    return Dn.concat_cols(v), {"widths": [x.shape[1] for x in v]}


def _fwd_cross_entropy(v, a):
    labels, index = a["labels"], a["index"]
    if len(index) == 0:
        raise ValueError("cross-entropy over an empty node set")
    loss, logp = _cross_entropy(v[0], labels, index)
    return np.array(loss), {"logp": logp}


def _fwd_sum(v, a):
    x = v[0]
    return np.array((x.values if isinstance(x, CsrMatrix) else x).sum()), {}


def _fwd_sum_squares(v, a):
    x = v[0]
    vals = x.values if isinstance(x, CsrMatrix) else x
    return np.array(0.5 * np.sum(vals * vals)), {}


_FORWARD: dict[str, Callable] = {
    "softmax": _fwd_softmax,
    "select": _fwd_select,
    "convex_combine": _fwd_convex_combine,
    "spmm_ss": _fwd_spmm_ss,
    "row_normalize": _fwd_row_normalize,
    "add_identity": _fwd_add_identity,
    "spmm_sd": _fwd_spmm_sd,
    "matmul": _fwd_matmul,
    "add_bias": _fwd_add_bias,
    "relu": _fwd_relu,
    "concat_cols": _fwd_concat,
    "cross_entropy": _fwd_cross_entropy,
    "sum": _fwd_sum,
    "sum_squares": _fwd_sum_squares,
}


# -- adjoint rules: (g, input values, output, saved, need) -> input grads ---

def _bwd_softmax(g, v, y, s, need):
    return [y * (g - np.sum(g * y, axis=-1, keepdims=True))]


def _bwd_select(g, v, y, s, need):
    out = np.zeros(s["shape"])
    out[s["index"]] = g
    return [out]


def _bwd_convex_combine(g, v, y, s, need):
    return [s["plan"].weight_grad(g)]


def _bwd_spmm_ss(g, v, c, s, need):
    a, b = v
    gc = c.with_values(g)
    ga = gb = None
    if need[0]:
        # dL/dA = G_C B^T restricted to pattern(A)
        ga = S.masked_row_dots(gc, b, a)
    if need[1]:
        # dL/dB = A^T G_C restricted to pattern(B)
        ga_t = S.transpose(a)
        gb = S.masked_row_dots(ga_t, S.transpose(gc), b)
    return [ga, gb]


def _bwd_row_normalize(g, v, y, s, need):
    a = v[0]
    rows = s["rows"]
    if s.get("mode", "inverse") == "inverse":
        inv = s["inv"]
        if s.get("detach_degrees"):
            return [g * inv[rows]]
        # b_ij = a_ij / d_i  =>  da_ij = (g_ij - sum_k g_ik b_ik) / d_i
        r = np.bincount(rows, weights=g * y.values, minlength=a.n_rows)
        return [(g - r[rows]) * inv[rows]]
    sc = s["s"]
    cols = a.col_indices
    if s.get("detach_degrees"):
        return [g * sc[rows] * sc[cols]]
    gy = g * y.values
    r = np.bincount(rows, weights=gy, minlength=a.n_rows)
    c = np.bincount(cols, weights=gy, minlength=a.n_rows)
    # b_ij = a_ij s_i s_j with s = d^-1/2; degree of index i feeds both row i and column i
    return [g * sc[rows] * sc[cols] - 0.5 * (sc[rows] ** 2) * (r[rows] + c[rows])]


def _bwd_add_identity(g, v, y, s, need):
    return [g[s["pos"]]]


def _bwd_spmm_sd(g, v, y, s, need):
    a, x = v
    ga = S.sampled_dense_dots(a, g, x) if need[0] else None
    gx = S.spmm_sd(S.transpose(a), g) if need[1] else None
    return [ga, gx]


def _bwd_matmul(g, v, y, s, need):
    a, b = v
    return [g @ b.T if need[0] else None, a.T @ g if need[1] else None]


def _bwd_add_bias(g, v, y, s, need):
    return [g, g.sum(axis=0)]


def _bwd_relu(g, v, y, s, need):
    # subgradient 0 at exactly 0
    return [g * (v[0] > 0)]


def _bwd_concat(g, v, y, s, need):
    edges = np.cumsum([0] + s["widths"])
    return [g[:, edges[i]:edges[i + 1]] for i in range(len(v))]


def _bwd_cross_entropy(g, v, y, s, need):
    index, labels, logp = s["index"], s["labels"], s["logp"]
    probs = np.exp(logp)
    probs[np.arange(len(index)), labels] -= 1.0
    out = np.zeros_like(v[0])
    np.add.at(out, index, probs * (float(g) / len(index)))
    return [out]


def _bwd_sum(g, v, y, s, need):
    x = v[0]
    shape = x.values.shape if isinstance(x, CsrMatrix) else x.shape
    return [np.full(shape, float(g))]


def _bwd_sum_squares(g, v, y, s, need):
    x = v[0]
    vals = x.values if isinstance(x, CsrMatrix) else x
    return [float(g) * vals]


_BACKWARD: dict[str, Callable] = {
    "softmax": _bwd_softmax,
    "select": _bwd_select,
    "convex_combine": _bwd_convex_combine,
    "spmm_ss": _bwd_spmm_ss,
    "row_normalize": _bwd_row_normalize,
    "add_identity": _bwd_add_identity,
    "spmm_sd": _bwd_spmm_sd,
    "matmul": _bwd_matmul,
    "add_bias": _bwd_add_bias,
    "relu": _bwd_relu,
    "concat_cols": _bwd_concat,
    "cross_entropy": _bwd_cross_entropy,
    "sum": _bwd_sum,
    "sum_squares": _bwd_sum_squares,
}

OP_KINDS = tuple(sorted(_FORWARD))


def finite_diff_check(
    f: Callable[[Mapping[str, np.ndarray]], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f(params)`` must return ``(loss, grads)``. The error for one coordinate is
    |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    loss, grads = f(params)
    if not np.isfinite(loss):
        raise NonFiniteError(f"loss is not finite: {loss}")
    worst = 0.0
    for name, p in params.items():
        g_ad = np.asarray(grads[name])
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = f(params)[0]
            flat[i] = orig - epsilon
            down = f(params)[0]
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"non-finite loss while perturbing {name}[{i}]")
            g_fd = (up - down) / (2 * epsilon)
            ga = g_ad.reshape(-1)[i]
            err = abs(ga - g_fd) / max(1.0, abs(ga), abs(g_fd))
            worst = max(worst, err)
    return worst
