"""Turn learned selectors into ranked meta-paths and attention tables.

A^(L) for one channel expands into a sum over raw edge-type sequences
(t_0, ..., t_L), one choice per selector, weighted by the product of the
chosen α entries. Selector 0 is the leftmost factor, so the raw sequence read
backwards is the hop order: t_L is the first hop. Identity choices are elided;
raw sequences that collapse to the same effective path have their weights
summed. Sequences that are not type-consistent multiply to a structurally
zero matrix and are dropped, but their mass is kept in ``dropped_weight``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data.graph import IDENTITY, TypeRegistry
from .sparse import row_softmax

EXHAUSTIVE_LIMIT = 10 ** 6
BEAM_WIDTH = 10 ** 4
IDENTITY_PATH = "(identity)"


@dataclass(frozen=True)
class MetaPathDescriptor:
    """One effective meta-path.

    ``edge_type_sequence`` lists edge type names in hop order (first hop
    first) with identities removed; it is empty for the all-identity path.
    """

    edge_type_sequence: tuple[str, ...]
    node_type_string: str
    weight: float
    endpoints: tuple[str | None, str | None]
    channel: int | None = None

    def to_record(self) -> dict:
        return {
            "channel": "combined" if self.channel is None else self.channel,
            "sequence": list(self.edge_type_sequence),
            "path_string": self.node_type_string,
            "weight": self.weight,
        }


def candidate_names(registry: TypeRegistry, k: int) -> list[str]:
    """Names of the K candidates: edge types, with identity first if K = E + 1."""
    names = [e.name for e in registry.edge_types]
    if k == len(names):
        return names
    if k == len(names) + 1:
        return [IDENTITY] + names
    raise ValueError(f"alphas have K={k} entries but the registry has {len(names)} edge types")


def node_type_string(registry: TypeRegistry, hops: Sequence[str]) -> str:
    if not hops:
        return IDENTITY_PATH
    ets = [registry.edge_type(h) for h in hops]
    types = [ets[0].src] + [e.dst for e in ets]
    sep = "" if all(len(t) == 1 for t in types) else "-"
    return sep.join(types)


def _check_alphas(alphas) -> np.ndarray:
    a = np.asarray(alphas, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, None, :]
    if a.ndim != 3:
        raise ValueError(f"alphas must be (L+1, K) or (L+1, C, K), got shape {a.shape}")
    if np.any(a < 0) or not np.allclose(a.sum(axis=-1), 1.0, atol=1e-9):
        raise ValueError("each alpha vector must be a probability vector")
    return a


def _expand_channel(alpha: np.ndarray, registry: TypeRegistry, names: list[str]):
    """Effective path (tuple of candidate ids, hop order) -> summed weight.

    Returns ``(weights, dropped_weight)``.
    """
    n_sel, k = alpha.shape
    src = {i: registry.edge_type(n).src for i, n in enumerate(names) if n != IDENTITY}
    dst = {i: registry.edge_type(n).dst for i, n in enumerate(names) if n != IDENTITY}
    beam = k ** n_sel > EXHAUSTIVE_LIMIT
    if beam:
        warnings.warn(f"{k}^{n_sel} sequences exceed {EXHAUSTIVE_LIMIT}; "
                      f"using beam search of width {BEAM_WIDTH}", RuntimeWarning, stacklevel=3)
    states: dict[tuple[int, ...], float] = {(): 1.0}
    dropped = 0.0
    for s in range(n_sel - 1, -1, -1):           # first hop is the last selector
        nxt: dict[tuple[int, ...], float] = {}
        for path, w in states.items():
            for t in range(k):
                wt = w * alpha[s, t]
                if names[t] == IDENTITY:
                    key = path
                elif not path or dst[path[-1]] == src[t]:
                    key = path + (t,)
                else:
                    dropped += wt
                    continue
                nxt[key] = nxt.get(key, 0.0) + wt
        if beam and len(nxt) > BEAM_WIDTH:
            ranked = sorted(nxt.items(), key=lambda kv: (-kv[1], kv[0]))
            dropped += sum(w for _, w in ranked[BEAM_WIDTH:])
            nxt = dict(ranked[:BEAM_WIDTH])
        states = nxt
    return states, dropped


def _descriptors(weights: dict, registry, names, channel, min_weight) -> list[MetaPathDescriptor]:
    out = []
    for path, w in weights.items():
        if w < min_weight:
            continue
        hops = tuple(names[t] for t in path)
        if hops:
            ends = (registry.edge_type(hops[0]).src, registry.edge_type(hops[-1]).dst)
        else:
            ends = (None, None)
        out.append(MetaPathDescriptor(hops, node_type_string(registry, hops), float(w), ends, channel))
    out.sort(key=lambda d: (-d.weight, d.node_type_string, d.edge_type_sequence))
    return out


@dataclass
class MetaPathReport:
    channels: list[list[MetaPathDescriptor]]
    combined: list[MetaPathDescriptor]
    dropped_weight: list[float] = field(default_factory=list)

    def records(self) -> list[dict]:
        rows = [d.to_record() for ch in self.channels for d in ch]
        return rows + [d.to_record() for d in self.combined]


def metapath_report(alphas, registry: TypeRegistry, min_weight: float = 0.0) -> MetaPathReport:
    """Per-channel rankings plus a combined ranking (uniform channel average)."""
    if not 0.0 <= min_weight <= 1.0:
        raise ValueError("min_weight must lie in [0, 1]")
    a = _check_alphas(alphas)
    names = candidate_names(registry, a.shape[2])
    per, dropped = [], []
    total: dict[tuple[int, ...], float] = {}
    n_ch = a.shape[1]
    for c in range(n_ch):
        w, d = _expand_channel(a[:, c, :], registry, names)
        per.append(_descriptors(w, registry, names, c, min_weight))
        dropped.append(d)
        for key, val in w.items():
            total[key] = total.get(key, 0.0) + val / n_ch
    combined = _descriptors(total, registry, names, None, min_weight)
    return MetaPathReport(per, combined, dropped)


def enumerate_metapaths(alphas, registry: TypeRegistry,
                        min_weight: float = 0.0) -> list[MetaPathDescriptor]:
    """Ranked effective meta-paths; for several channels, the combined ranking."""
    return metapath_report(alphas, registry, min_weight).combined


def top_k_between(descriptors: Sequence[MetaPathDescriptor], target_type: str,
                  k: int) -> list[MetaPathDescriptor]:
    """Highest-weight meta-paths that start and end at ``target_type``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    hits = [d for d in descriptors if d.endpoints == (target_type, target_type)]
    hits.sort(key=lambda d: (-d.weight, d.node_type_string, d.edge_type_sequence))
    return hits[:k]


@dataclass
class AttentionReport:
    names: list[str]
    rows: list[tuple[int, int, np.ndarray]]   # (selector index, channel, alpha)

    def records(self) -> list[dict]:
        return [{"layer": s, "channel": c, "alpha": dict(zip(self.names, map(float, a)))}
                for s, c, a in self.rows]

    def table(self) -> str:
        width = max(8, *(len(n) for n in self.names))
        head = f"{'layer':>5} {'chan':>4} " + " ".join(f"{n:>{width}}" for n in self.names)
        lines = [head]
        for s, c, a in self.rows:
            lines.append(f"{s:>5} {c:>4} " + " ".join(f"{v:>{width}.4f}" for v in a))
        return "\n".join(lines)


def selector_alphas(selectors) -> np.ndarray:
    """Softmax over the last axis of the selector logits."""
    return row_softmax(np.asarray(selectors, dtype=np.float64))


def attention_report(params, registry: TypeRegistry) -> AttentionReport:
    """α for every (selector, channel) pair; ``params`` is GtnParams or raw logits."""
    logits = getattr(params, "selectors", params)
    a = _check_alphas(selector_alphas(logits))
    names = candidate_names(registry, a.shape[2])
    rows = [(s, c, a[s, c]) for s in range(a.shape[0]) for c in range(a.shape[1])]
    return AttentionReport(names, rows)


def format_metapaths(descriptors: Sequence[MetaPathDescriptor], limit: int | None = None) -> str:
    lines = [f"{'rank':>4} {'weight':>8}  path"]
    for i, d in enumerate(descriptors[:limit], 1):
        seq = "/".join(d.edge_type_sequence) or IDENTITY
        lines.append(f"{i:>4} {d.weight:>8.4f}  {d.node_type_string}  [{seq}]")
    return "\n".join(lines)


def to_jsonl(records: Sequence[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
