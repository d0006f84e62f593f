"""Synthetic heterogeneous graphs with a planted label-bearing meta-path.

Every node draws a latent group in [0, num_classes). Relations are generated
with homophily: each edge stays inside the source node's group with
probability ``homophily``. Only nodes of the *far* type (the source of the
planted path's first hop) carry class information in their features, so a
target node's label is recoverable only by walking the planted path:

    label(i) = majority group over far nodes j, weighted by the number of
               planted-path walks j -> ... -> i; ties broken by a seeded
               per-node class priority.

Label noise flips a label to a different class. It is applied to every
target node outside the test split; test labels stay equal to the planted
function so recovery can be measured against ground truth.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..sparse import CsrMatrix, spmm_sd, spmm_ss
from .graph import EdgeType, HeteroGraph, LabeledSplit, TypeRegistry


class InfeasibleSpec(ValueError):
    pass


@dataclass
class Relation:
    """Edges between two node types.

    Generated from the ``src`` side: every src node gets at least one edge and
    ``degree`` edges on average. Produces edge type ``src+dst`` and, when
    ``reverse`` is set, its transpose ``dst+src``. ``homophily`` overrides the
    spec-wide value for this relation (0 gives a group-blind distractor).
    """

    src: str
    dst: str
    degree: float = 3.0
    reverse: bool = True
    homophily: float | None = None


@dataclass
class SyntheticSpec:
    node_types: list[tuple[str, int]]
    relations: list[Relation]
    planted_path: tuple[str, ...]          # edge type names, first hop first
    num_classes: int = 3
    noise: float = 0.0
    seed: int = 0
    homophily: float = 0.8
    split_fractions: tuple[float, float, float] = (0.3, 0.2, 0.5)

    def __post_init__(self):
        self.node_types = [(str(n), int(c)) for n, c in self.node_types]
        self.relations = [r if isinstance(r, Relation) else Relation(**r) for r in self.relations]
        self.planted_path = tuple(self.planted_path)
        self.split_fractions = tuple(float(f) for f in self.split_fractions)

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticSpec:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InfeasibleSpec(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> SyntheticSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["node_types"] = [list(t) for t in self.node_types]
        d["planted_path"] = list(self.planted_path)
        d["split_fractions"] = list(self.split_fractions)
        return d

    def edge_types(self) -> list[EdgeType]:
        out = []
        for r in self.relations:
            out.append(EdgeType(r.src + r.dst, r.src, r.dst))
            if r.reverse:
                out.append(EdgeType(r.dst + r.src, r.dst, r.src))
        return out


@dataclass
class PlantedTruth:
    path: tuple[str, ...]
    path_string: str
    target_type: str
    far_type: str
    groups: np.ndarray
    clean_labels: np.ndarray = field(repr=False)


def _validate(spec: SyntheticSpec) -> TypeRegistry:
    counts = dict(spec.node_types)
    if not 0.0 <= spec.noise < 1.0:
        raise InfeasibleSpec(f"noise must lie in [0, 1), got {spec.noise}")
    if spec.num_classes < 2:
        raise InfeasibleSpec("need at least two classes")
    if not 0.0 <= spec.homophily <= 1.0:
        raise InfeasibleSpec("homophily must lie in [0, 1]")
    fr = spec.split_fractions
    if len(fr) != 3 or min(fr) < 0 or sum(fr) > 1.0 + 1e-12:
        raise InfeasibleSpec(f"bad split fractions {fr}")
    for r in spec.relations:
        for t in (r.src, r.dst):
            if t not in counts:
                raise InfeasibleSpec(f"relation uses unknown node type {t!r}")
            if counts[t] == 0:
                raise InfeasibleSpec(f"relation {r.src}-{r.dst} needs nodes of type {t!r}")
        if r.degree < 1:
            raise InfeasibleSpec("relation degree must be at least 1")
        if r.homophily is not None and not 0.0 <= r.homophily <= 1.0:
            raise InfeasibleSpec("relation homophily must lie in [0, 1]")
    try:
        registry = TypeRegistry(spec.node_types, spec.edge_types())
    except ValueError as err:
        raise InfeasibleSpec(str(err)) from None
    if not spec.planted_path:
        raise InfeasibleSpec("planted path is empty")
    names = {e.name: e for e in registry.edge_types}
    hops = []
    for name in spec.planted_path:
        if name not in names:
            raise InfeasibleSpec(f"planted path uses unknown edge type {name!r}")
        hops.append(names[name])
    for a, b in zip(hops, hops[1:]):
        if a.dst != b.src:
            raise InfeasibleSpec(f"planted path is not type-consistent at {a.name} -> {b.name}")
    return registry


def _relation_edges(rng, r: Relation, registry: TypeRegistry, groups: np.ndarray, homophily):
    src_t, dst_t = registry.node_type(r.src), registry.node_type(r.dst)
    dst_ids = np.arange(dst_t.start, dst_t.stop)
    dst_groups = groups[dst_ids]
    by_group = {g: dst_ids[dst_groups == g] for g in np.unique(dst_groups)}
    srcs, dsts = [], []
    for u in range(src_t.start, src_t.stop):
        k = 1 + rng.poisson(r.degree - 1.0)
        same = by_group.get(groups[u], dst_ids[:0])
        for _ in range(k):
            if len(same) and rng.random() < homophily:
                v = same[rng.integers(len(same))]
            else:
                v = dst_ids[rng.integers(len(dst_ids))]
            srcs.append(u)
            dsts.append(v)
    return np.array(srcs, dtype=np.int64), np.array(dsts, dtype=np.int64)


def tie_priority(seed: int, num_nodes: int, num_classes: int) -> np.ndarray:
    """Per-node class priorities used to break majority-vote ties."""
    return np.random.default_rng([seed, 7919]).random((num_nodes, num_classes))


def planted_labels(votes: np.ndarray, priority: np.ndarray) -> np.ndarray:
    """Argmax of votes per row; among tied maxima the highest priority wins."""
    top = votes.max(axis=1, keepdims=True)
    masked = np.where(votes == top, priority, -1.0)
    return masked.argmax(axis=1)


def path_string(hops: list[EdgeType]) -> str:
    types = [hops[0].src] + [h.dst for h in hops]
    sep = "" if all(len(t) == 1 for t in types) else "-"
    return sep.join(types)


def generate_synthetic(spec: SyntheticSpec):
    """Build ``(HeteroGraph, LabeledSplit, PlantedTruth)`` from ``spec``.

    Deterministic in ``spec.seed``.
    """
    registry = _validate(spec)
    rng = np.random.default_rng(spec.seed)
    n = registry.num_nodes
    C = spec.num_classes
    groups = rng.integers(C, size=n)

    adj = []
    for r in spec.relations:
        h = spec.homophily if r.homophily is None else r.homophily
        s, d = _relation_edges(rng, r, registry, groups, h)
        adj.append(CsrMatrix.from_coo(d, s, 1.0, (n, n), duplicates="collapse"))
        if r.reverse:
            adj.append(CsrMatrix.from_coo(s, d, 1.0, (n, n), duplicates="collapse"))

    hops = [registry.edge_type(name) for name in spec.planted_path]
    far, target = hops[0].src, hops[-1].dst
    # A_P = A_{t_l} ... A_{t_1}: walk counts from far nodes (cols) to targets (rows)
    by_name = dict(zip([e.name for e in registry.edge_types], adj))
    reach = by_name[hops[0].name]
    for h in hops[1:]:
        reach = spmm_ss(by_name[h.name], reach)
    tt, ft = registry.node_type(target), registry.node_type(far)
    far_onehot = np.zeros((n, C))
    far_onehot[np.arange(ft.start, ft.stop), groups[ft.start:ft.stop]] = 1.0
    votes = spmm_sd(reach, far_onehot)[tt.start:tt.stop]

    target_ids = np.arange(tt.start, tt.stop)
    clean = np.full(n, -1, dtype=np.int64)
    clean[target_ids] = planted_labels(votes, tie_priority(spec.seed, n, C)[target_ids])

    perm = rng.permutation(target_ids)
    n_train = int(round(spec.split_fractions[0] * len(perm)))
    n_val = int(round(spec.split_fractions[1] * len(perm)))
    n_test = int(round(spec.split_fractions[2] * len(perm)))
    n_test = min(n_test, len(perm) - n_train - n_val)
    train = np.sort(perm[:n_train])
    val = np.sort(perm[n_train:n_train + n_val])
    test = np.sort(perm[n_train + n_val:n_train + n_val + n_test])

    labels = clean.copy()
    noisy_ids = np.setdiff1d(target_ids, test)
    flip = rng.random(len(noisy_ids)) < spec.noise
    shift = rng.integers(1, C, size=len(noisy_ids))
    labels[noisy_ids[flip]] = (labels[noisy_ids[flip]] + shift[flip]) % C
    # keep class ids dense even on tiny graphs where a class may be absent
    present = np.unique(labels[labels >= 0])
    if not np.array_equal(present, np.arange(C)):
        extra = np.setdiff1d(np.unique(clean[clean >= 0]), present)
        remap = np.full(C, -1)
        remap[np.concatenate([present, extra])] = np.arange(len(present) + len(extra))
        labels[labels >= 0] = remap[labels[labels >= 0]]
        clean[clean >= 0] = remap[clean[clean >= 0]]

    node_type_ids = registry.type_of(np.arange(n))
    features = np.zeros((n, C + len(registry.node_types)))
    features[:, :C] = far_onehot
    features[np.arange(n), C + node_type_ids] = 1.0

    graph = HeteroGraph(registry, adj, features, False)
    split = LabeledSplit(labels, train, val, test, target)
    truth = PlantedTruth(spec.planted_path, path_string(hops), target, far, groups, clean)
    return graph, split, truth


def desk_spec(seed: int = 0) -> SyntheticSpec:
    """12-node graph for gradient checks: relations A-P (both ways) and C->P,
    so three edge types plus the identity."""
    return SyntheticSpec(
        node_types=[("A", 5), ("P", 4), ("C", 3)],
        relations=[Relation("A", "P", 2.0), Relation("C", "P", 1.5, reverse=False)],
        planted_path=("AP",),
        num_classes=2,
        seed=seed,
        split_fractions=(0.5, 0.25, 0.25),
    )


def planted_spec(seed: int = 0, noise: float = 0.05) -> SyntheticSpec:
    """600 nodes, three node types, planted path C->P->A with labels on A.

    The extra A-C relation is group-blind, so aggregating over the merged
    graph mixes label signal with noise while the planted path stays clean.
    """
    return SyntheticSpec(
        node_types=[("A", 240), ("P", 180), ("C", 180)],
        relations=[Relation("A", "P", 3.0), Relation("P", "C", 3.0),
                   Relation("A", "C", 3.0, homophily=0.0)],
        planted_path=("CP", "PA"),
        num_classes=3,
        noise=noise,
        seed=seed,
    )
