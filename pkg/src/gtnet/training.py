"""Adam, the training loop with validation-based model selection, and F1."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .autodiff import NonFiniteError
from .data.graph import HeteroGraph, LabeledSplit
from .model import (DECAYED, ForwardOutput, GtnConfig, GtnParams, gcn_forward,
                    gtn_forward, init_gcn_params, init_params, loss)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    weight_decay: float = 0.001
    max_epochs: int = 100
    patience: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    selector_lr: float | None = None   # None: same as learning_rate

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.learning_rate < 0 or self.weight_decay < 0 or (self.selector_lr or 0) < 0:
            raise ValueError("learning_rate and weight_decay must be nonnegative")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.epsilon <= 0:
            raise ValueError("invalid Adam constants")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# -- metrics ---------------------------------------------------------------

def evaluate_f1(logits: np.ndarray, labels: np.ndarray, node_set) -> tuple[float, float]:
    """(macro F1, micro F1) of argmax predictions on ``node_set``.

    ``labels`` is indexed by node id. Macro averages over every class that
    occurs as a true or predicted label in the set.
    """
    nodes = np.asarray(node_set, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("cannot evaluate F1 on an empty node set")
    y = np.asarray(labels)[nodes]
    pred = np.asarray(logits)[nodes].argmax(axis=1)
    classes = np.union1d(y, pred)
    f1s = []
    for c in classes:
        tp = np.sum((pred == c) & (y == c))
        fp = np.sum((pred == c) & (y != c))
        fn = np.sum((pred != c) & (y == c))
        f1s.append(2 * tp / (2 * tp + fp + fn) if tp else 0.0)
    tp = np.sum(pred == y)
    micro = tp / len(y)  # single-label: pooled precision == recall == accuracy
    return float(np.mean(f1s)), float(micro)


# -- Adam ------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig, decay: Iterable[str] = DECAYED):
    """One bias-corrected Adam update with decoupled weight decay on ``decay`` names.

    Returns ``(new_params, state)``; input arrays are not modified.
    """
    decay = set(decay)
    lr, b1, b2 = config.learning_rate, config.beta1, config.beta2
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        m = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        step = config.selector_lr if name == "selectors" and config.selector_lr is not None else lr
        new = p - step * m_hat / (np.sqrt(v_hat) + config.epsilon)
        if name in decay and config.weight_decay:
            new = new - lr * config.weight_decay * p
        out[name] = new
    return out, state


# -- history ---------------------------------------------------------------

class TrainingDiverged(FloatingPointError):
    """Loss became non-finite; ``history`` holds the epochs completed so far."""

    def __init__(self, msg, history: TrainHistory):
        super().__init__(msg)
        self.history = history


@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    test_macro_f1: float | None = None
    test_micro_f1: float | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.records)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.records])

    def summary(self) -> dict:
        best = self.records[self.best_epoch] if self.best_epoch >= 0 else {}
        return {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "best_val_macro_f1": best.get("val_macro_f1"),
            "best_val_micro_f1": best.get("val_micro_f1"),
            "test_macro_f1": self.test_macro_f1,
            "test_micro_f1": self.test_micro_f1,
        }

    def to_jsonl(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_jsonl(cls, path) -> TrainHistory:
        with open(path) as fh:
            return cls([json.loads(line) for line in fh if line.strip()])

    def equals(self, other: TrainHistory) -> bool:
        return self.records == other.records and self.summary() == other.summary()


# -- loop ------------------------------------------------------------------

def _fit(forward: Callable[[dict], ForwardOutput], params: dict, split: LabeledSplit,
         config: TrainConfig, extra: Callable[[ForwardOutput], dict] | None = None,
         decay: Iterable[str] = DECAYED):
    """Shared loop. Each epoch evaluates the current parameters, then steps.

    Selection: highest validation macro-F1, ties broken by lower validation loss.
    """
    history = TrainHistory()
    state = AdamState()
    best_key, best_params, since_best = None, None, 0
    has_val = len(split.val) > 0
    for epoch in range(config.max_epochs):
        out = forward(params)
        train_loss = loss(out, split)
        if not np.isfinite(train_loss):
            raise TrainingDiverged(f"non-finite training loss at epoch {epoch}", history)
        grads = out.backward()
        rec = {"epoch": epoch, "train_loss": train_loss}
        rec["train_macro_f1"], rec["train_micro_f1"] = evaluate_f1(out.logits, split.labels, split.train)
        if has_val:
            rec["val_loss"] = float(out.tape.value(out.tape.cross_entropy(
                out.logits_node, split.labels[split.val], split.val)))
            rec["val_macro_f1"], rec["val_micro_f1"] = evaluate_f1(out.logits, split.labels, split.val)
        else:
            rec["val_loss"] = train_loss
            rec["val_macro_f1"], rec["val_micro_f1"] = rec["train_macro_f1"], rec["train_micro_f1"]
        if extra is not None:
            rec.update(extra(out))
        history.records.append(rec)
        log.debug("epoch %d loss %.5f val_f1 %.4f", epoch, train_loss, rec["val_macro_f1"])

        key = (rec["val_macro_f1"], -rec["val_loss"])
        if best_key is None or key > best_key:
            best_key, best_params, since_best = key, {k: v.copy() for k, v in params.items()}, 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= config.patience:
                history.stopped_early = True
                break
        params, state = adam_step(params, grads, state, config, decay)

    final = forward(best_params)
    if len(split.test):
        history.test_macro_f1, history.test_micro_f1 = evaluate_f1(final.logits, split.labels, split.test)
    return best_params, history


def train(graph: HeteroGraph, split: LabeledSplit, gtn_config: GtnConfig,
          train_config: TrainConfig) -> tuple[GtnParams, TrainHistory]:
    """Train GTN; returns the best-validation parameters and the history.

    Deterministic given ``train_config.seed`` (which seeds initialization).
    """
    graph = graph.with_identity(gtn_config.include_identity)
    init = init_params(gtn_config, len(graph.adj), graph.num_features, split.num_classes,
                       seed=train_config.seed)

    def forward(p):
        return gtn_forward(graph, GtnParams.from_dict(p), gtn_config)

    def alpha_err(out):
        return {"alpha_sum_err": float(np.abs(out.alphas.sum(axis=-1) - 1.0).max())}

    best, history = _fit(forward, init.as_dict(), split, train_config, alpha_err)
    return GtnParams.from_dict(best), history


def train_gcn_baseline(graph: HeteroGraph, split: LabeledSplit, gtn_config: GtnConfig,
                       train_config: TrainConfig, num_layers: int = 2):
    """GCN on the merged homogeneous graph (all edge types collapsed)."""
    adj = graph.merged_adjacency()
    init = init_gcn_params(gtn_config, graph.num_features, split.num_classes, num_layers,
                           seed=train_config.seed)

    def forward(p):
        return gcn_forward(adj, graph.features, p, gtn_config)

    decay = [k for k in init if k.startswith("gcn_weight")] + ["dense1_w", "dense2_w"]
    return _fit(forward, init, split, train_config, decay=decay)
