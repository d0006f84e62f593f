"""GTN model: GT layers, shared-weight GCN per channel, classifier.

Layer outputs are kept unnormalized; degree normalization happens where the
matrix is consumed (left operand of the next GT layer, and inside the GCN
after adding self-loops). ``normalize_at="output"`` instead normalizes every
layer output directly, for comparison.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tape
from .data.graph import HeteroGraph, LabeledSplit
from .sparse import CsrMatrix, ShapeError


@dataclass
class GtnConfig:
    num_layers: int = 2
    num_channels: int = 2
    hidden_dim: int = 64
    include_identity: bool = True
    activation: str = "relu"
    normalize_at: str = "consumption"
    classifier_hidden: int = 64
    gcn_norm: str = "inverse"
    detach_degrees: bool = False
    selector_jitter: float = 0.01
    prune: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("num_layers", "num_channels", "hidden_dim", "classifier_hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.normalize_at not in ("consumption", "output"):
            raise ValueError(f"normalize_at must be 'consumption' or 'output'")
        if self.gcn_norm not in ("inverse", "symmetric"):
            raise ValueError("gcn_norm must be 'inverse' or 'symmetric'")
        if self.selector_jitter < 0 or self.prune < 0:
            raise ValueError("selector_jitter and prune must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> GtnConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


PARAM_NAMES = ("selectors", "gcn_weight", "dense1_w", "dense1_b", "dense2_w", "dense2_b")
DECAYED = ("gcn_weight", "dense1_w", "dense2_w")


@dataclass(eq=False)
class GtnParams:
    """All trainable tensors.

    ``selectors[s, c]`` holds the length-K logits of selector s (0..L) for
    channel c; selectors 0 and 1 feed the first GT layer.
    """

    selectors: np.ndarray
    gcn_weight: np.ndarray
    dense1_w: np.ndarray
    dense1_b: np.ndarray
    dense2_w: np.ndarray
    dense2_b: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d) -> GtnParams:
        return cls(**{name: np.array(d[name], dtype=np.float64) for name in PARAM_NAMES})

    def copy(self) -> GtnParams:
        return GtnParams.from_dict(self.as_dict())

    def check(self, config: GtnConfig, num_candidates: int, num_features: int) -> None:
        L, C, d = config.num_layers, config.num_channels, config.hidden_dim
        h = config.classifier_hidden
        want = {
            "selectors": (L + 1, C, num_candidates),
            "gcn_weight": (num_features, d),
            "dense1_w": (C * d, h),
            "dense1_b": (h,),
            "dense2_w": (h, self.dense2_w.shape[1]),
            "dense2_b": (self.dense2_w.shape[1],),
        }
        for name, shape in want.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ShapeError(f"parameter {name} has shape {got}, expected {shape}")


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: GtnConfig, num_candidates: int, num_features: int,
                num_classes: int, seed: int = 0) -> GtnParams:
    """Constant selector logits plus a small seeded jitter; glorot dense weights."""
    rng = np.random.default_rng(seed)
    L, C, d, h = config.num_layers, config.num_channels, config.hidden_dim, config.classifier_hidden
    jitter = config.selector_jitter
    selectors = rng.uniform(-jitter, jitter, size=(L + 1, C, num_candidates)) if jitter else \
        np.zeros((L + 1, C, num_candidates))
    return GtnParams(
        selectors=selectors,
        gcn_weight=_glorot(rng, num_features, d),
        dense1_w=_glorot(rng, C * d, h),
        dense1_b=np.zeros(h),
        dense2_w=_glorot(rng, h, num_classes),
        dense2_b=np.zeros(num_classes),
    )


@dataclass(eq=False)
class ForwardOutput:
    logits: np.ndarray
    embeddings: np.ndarray
    metapath_adj: list[CsrMatrix]
    alphas: np.ndarray
    tape: Tape = field(repr=False)
    logits_node: int = field(repr=False)
    loss_node: int | None = field(default=None, repr=False)

    def backward(self) -> dict[str, np.ndarray]:
        if self.loss_node is None:
            raise RuntimeError("call loss(output, split) before backward()")
        return self.tape.backward(self.loss_node)


# -- building blocks on a tape ---------------------------------------------

def _first_layer(tape: Tape, plan, alpha0: int, alpha1: int, cfg: GtnConfig) -> int:
    q1 = tape.convex_combine(alpha0, plan)
    q2 = tape.convex_combine(alpha1, plan)
    out = tape.spmm_ss(q1, q2, cfg.prune)
    if cfg.normalize_at == "output":
        out = tape.row_normalize(out, "inverse", cfg.detach_degrees)
    return out


def _next_layer(tape: Tape, prev: int, plan, alpha: int, cfg: GtnConfig) -> int:
    q = tape.convex_combine(alpha, plan)
    if cfg.normalize_at == "output":
        return tape.row_normalize(tape.spmm_ss(prev, q, cfg.prune), "inverse", cfg.detach_degrees)
    left = tape.row_normalize(prev, "inverse", cfg.detach_degrees)
    return tape.spmm_ss(left, q, cfg.prune)


def _gcn(tape: Tape, adj: int, xw: int, cfg: GtnConfig) -> int:
    tilde = tape.add_identity(adj)
    norm = tape.row_normalize(tilde, cfg.gcn_norm, cfg.detach_degrees)
    return tape.relu(tape.spmm_sd(norm, xw))


def _classifier(tape: Tape, z: int, p: dict[str, int]) -> int:
    h = tape.relu(tape.add_bias(tape.matmul(z, p["dense1_w"]), p["dense1_b"]))
    return tape.add_bias(tape.matmul(h, p["dense2_w"]), p["dense2_b"])


def _as_candidates(graph: HeteroGraph, config: GtnConfig) -> HeteroGraph:
    return graph.with_identity(config.include_identity)


def gtn_forward(graph: HeteroGraph, params: GtnParams, config: GtnConfig,
                tape: Tape | None = None) -> ForwardOutput:
    """Full forward pass, recorded on ``tape`` (a fresh one by default)."""
    graph = _as_candidates(graph, config)
    params.check(config, len(graph.adj), graph.num_features)
    tape = tape if tape is not None else Tape()
    p = {name: tape.param(name, value) for name, value in params.as_dict().items()}
    plan = graph.plan
    alpha = tape.softmax(p["selectors"])
    x = tape.const(graph.features)
    xw = tape.matmul(x, p["gcn_weight"])
    chains, reps = [], []
    for c in range(config.num_channels):
        a = _first_layer(tape, plan, tape.select(alpha, (0, c)), tape.select(alpha, (1, c)), config)
        for s in range(2, config.num_layers + 1):
            a = _next_layer(tape, a, plan, tape.select(alpha, (s, c)), config)
        chains.append(a)
        reps.append(_gcn(tape, a, xw, config))
    z = tape.concat_cols(reps)
    logits = _classifier(tape, z, p)
    return ForwardOutput(
        logits=tape.value(logits),
        embeddings=tape.value(z),
        metapath_adj=[tape.value(a) for a in chains],
        alphas=tape.value(alpha),
        tape=tape,
        logits_node=logits,
    )


def loss(output: ForwardOutput, split: LabeledSplit, nodes: np.ndarray | None = None) -> float:
    """Mean cross-entropy over the training nodes (or ``nodes`` if given)."""
    nodes = split.train if nodes is None else np.asarray(nodes, dtype=np.int64)
    if len(nodes) == 0:
        raise ValueError("empty training set")
    node = output.tape.cross_entropy(output.logits_node, split.labels[nodes], nodes)
    output.loss_node = node
    return float(output.tape.value(node))


# -- standalone layer operations -------------------------------------------

def _selector_rows(sel) -> np.ndarray:
    sel = np.asarray(sel, dtype=np.float64)
    return sel[None, :] if sel.ndim == 1 else sel


def gt_layer_first(graph: HeteroGraph, sel0, sel1,
                   normalize_at: str = "consumption") -> CsrMatrix | list[CsrMatrix]:
    """First GT layer from selector logits: Q1 @ Q2 per channel.

    ``sel0``/``sel1`` are length-K vectors (one channel) or (C, K) arrays.
    Candidates are ``graph.adj`` as given (identity included iff the graph has it).
    """
    s0, s1 = _selector_rows(sel0), _selector_rows(sel1)
    cfg = GtnConfig(normalize_at=normalize_at)
    tape = Tape()
    a0 = tape.softmax(tape.const(s0))
    a1 = tape.softmax(tape.const(s1))
    outs = [tape.value(_first_layer(tape, graph.plan, tape.select(a0, c), tape.select(a1, c), cfg))
            for c in range(len(s0))]
    return outs[0] if np.ndim(sel0) == 1 else outs


def gt_layer_next(prev: CsrMatrix, graph: HeteroGraph, sel,
                  normalize_at: str = "consumption") -> CsrMatrix:
    """row_normalize(prev) @ convex_combine(candidates, softmax(sel))."""
    cfg = GtnConfig(normalize_at=normalize_at)
    tape = Tape()
    alpha = tape.softmax(tape.const(np.asarray(sel, dtype=np.float64)))
    return tape.value(_next_layer(tape, tape.const(prev), graph.plan, alpha, cfg))


def gcn_channel(a: CsrMatrix, x: np.ndarray, w: np.ndarray, mode: str = "inverse") -> np.ndarray:
    """relu(row_normalize(a + I) @ x @ w)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if a.n_cols != x.shape[0] or x.shape[1] != w.shape[0]:
        raise ShapeError(f"gcn_channel: A{a.shape} X{x.shape} W{w.shape}")
    tape = Tape()
    xw = tape.matmul(tape.const(x), tape.const(w))
    return tape.value(_gcn(tape, tape.const(a), xw, GtnConfig(gcn_norm=mode)))


def init_gcn_params(config: GtnConfig, num_features: int, num_classes: int,
                    num_layers: int = 2, seed: int = 0) -> dict[str, np.ndarray]:
    """Parameters for the merged-graph GCN baseline: ``num_layers`` propagation
    weights followed by the same two-layer head as GTN."""
    if num_layers < 1:
        raise ValueError("baseline needs at least one GCN layer")
    rng = np.random.default_rng(seed)
    d, h = config.hidden_dim, config.classifier_hidden
    params = {"gcn_weight": _glorot(rng, num_features, d)}
    for i in range(1, num_layers):
        params[f"gcn_weight_{i}"] = _glorot(rng, d, d)
    params["dense1_w"] = _glorot(rng, d, h)
    params["dense1_b"] = np.zeros(h)
    params["dense2_w"] = _glorot(rng, h, num_classes)
    params["dense2_b"] = np.zeros(num_classes)
    return params


def gcn_forward(adj: CsrMatrix, features: np.ndarray, params: dict[str, np.ndarray],
                config: GtnConfig, tape: Tape | None = None) -> ForwardOutput:
    """Plain GCN on one homogeneous graph with the GTN classifier head.

    Layer count follows the ``gcn_weight*`` entries of ``params``.
    """
    tape = tape if tape is not None else Tape()
    p = {name: tape.param(name, value) for name, value in params.items()}
    a = tape.const(adj)
    h = tape.const(features)
    layer_names = ["gcn_weight"] + sorted(
        (k for k in params if k.startswith("gcn_weight_")), key=lambda k: int(k.rsplit("_", 1)[1]))
    for name in layer_names:
        h = _gcn(tape, a, tape.matmul(h, p[name]), config)
    logits = _classifier(tape, h, p)
    return ForwardOutput(tape.value(logits), tape.value(h), [adj], np.zeros((0,)), tape, logits)


# -- checkpoints ------------------------------------------------------------

@dataclass
class Checkpoint:
    params: GtnParams
    config: GtnConfig
    seed: int
    meta: dict


def save_checkpoint(path, params: GtnParams, config: GtnConfig, seed: int,
                    meta: dict | None = None) -> Path:
    """Single ``.npz`` file: parameter arrays plus JSON-encoded config and metadata."""
    path = Path(path)
    header = json.dumps({"config": config.to_dict(), "seed": int(seed), "meta": meta or {}},
                        sort_keys=True)
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(header), **params.as_dict())
    return path


def load_checkpoint(path) -> Checkpoint:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        params = GtnParams.from_dict({name: data[name] for name in PARAM_NAMES})
    return Checkpoint(params, GtnConfig.from_dict(header["config"]), header["seed"], header["meta"])


def channel_blocks(params: GtnParams, config: GtnConfig) -> Sequence[np.ndarray]:
    """dense1 weight split into the per-channel input blocks."""
    d = config.hidden_dim
    return [params.dense1_w[c * d:(c + 1) * d] for c in range(config.num_channels)]
