"""Heterogeneous graph containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..sparse import CombinePlan, CsrMatrix

IDENTITY = "identity"


@dataclass(frozen=True)
class NodeType:
    name: str
    start: int
    count: int

    @property
    def stop(self) -> int:
        return self.start + self.count


@dataclass(frozen=True)
class EdgeType:
    """Edges from ``src``-typed nodes to ``dst``-typed nodes.

    Stored as A[dst_node, src_node] = 1.
    """

    name: str
    src: str
    dst: str


class TypeRegistry:
    """Node types with contiguous id ranges over [0, N), plus edge types."""

    def __init__(self, node_types: Sequence[tuple[str, int]], edge_types: Sequence[EdgeType]):
        self.node_types: list[NodeType] = []
        start = 0
        for name, count in node_types:
            if count < 0:
                raise ValueError(f"node type {name!r} has negative count")
            self.node_types.append(NodeType(name, start, int(count)))
            start += int(count)
        names = [t.name for t in self.node_types]
        if len(set(names)) != len(names):
            raise ValueError("duplicate node type names")
        self._by_name = {t.name: t for t in self.node_types}
        self.edge_types = [EdgeType(*e) if not isinstance(e, EdgeType) else e for e in edge_types]
        for e in self.edge_types:
            if e.src not in self._by_name or e.dst not in self._by_name:
                raise ValueError(f"edge type {e.name!r} names an unknown node type")
            if e.name == IDENTITY:
                raise ValueError(f"{IDENTITY!r} is reserved")
        if len({e.name for e in self.edge_types}) != len(self.edge_types):
            raise ValueError("duplicate edge type names")
        self._starts = np.array([t.start for t in self.node_types], dtype=np.int64)

    @property
    def num_nodes(self) -> int:
        return self.node_types[-1].stop if self.node_types else 0

    def node_type(self, name: str) -> NodeType:
        return self._by_name[name]

    def edge_type(self, name: str) -> EdgeType:
        for e in self.edge_types:
            if e.name == name:
                return e
        raise KeyError(name)

    def type_of(self, node_ids) -> np.ndarray:
        """Index into ``node_types`` for each node id."""
        node_ids = np.asarray(node_ids, dtype=np.int64)
        return np.searchsorted(self._starts, node_ids, side="right") - 1

    def type_mask(self, name: str) -> np.ndarray:
        t = self._by_name[name]
        mask = np.zeros(self.num_nodes, dtype=bool)
        mask[t.start:t.stop] = True
        return mask

    def __eq__(self, other):
        return (isinstance(other, TypeRegistry) and self.node_types == other.node_types
                and self.edge_types == other.edge_types)

    def __repr__(self):
        nt = ", ".join(f"{t.name}:{t.count}" for t in self.node_types)
        et = ", ".join(f"{e.name}({e.src}->{e.dst})" for e in self.edge_types)
        return f"TypeRegistry([{nt}], [{et}])"


@dataclass(eq=False)
class HeteroGraph:
    """Adjacency tensor as a list of N x N CSR matrices plus node features.

    When ``includes_identity`` is set, ``adj[0]`` is the identity and the
    remaining entries follow ``registry.edge_types`` in order.
    """

    registry: TypeRegistry
    adj: list[CsrMatrix]
    features: np.ndarray
    includes_identity: bool = False
    _plan: CombinePlan | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.registry.num_nodes
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError(f"features must be {n} x D, got {self.features.shape}")
        expected = len(self.registry.edge_types) + int(self.includes_identity)
        if len(self.adj) != expected:
            raise ValueError(f"expected {expected} adjacency matrices, got {len(self.adj)}")
        for a in self.adj:
            if a.shape != (n, n):
                raise ValueError(f"adjacency must be {n} x {n}, got {a.shape}")
        if self.includes_identity and not self.adj[0].equals(CsrMatrix.identity(n)):
            raise ValueError("adj[0] must be the identity when includes_identity is set")

    @property
    def num_nodes(self) -> int:
        return self.registry.num_nodes

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def edge_adj(self) -> list[CsrMatrix]:
        """Adjacency matrices of the real edge types (identity excluded)."""
        return self.adj[1:] if self.includes_identity else list(self.adj)

    @property
    def candidate_names(self) -> list[str]:
        names = [e.name for e in self.registry.edge_types]
        return [IDENTITY] + names if self.includes_identity else names

    @property
    def plan(self) -> CombinePlan:
        """Cached union pattern of the candidate matrices."""
        if self._plan is None:
            self._plan = CombinePlan(self.adj)
        return self._plan

    def with_identity(self, include: bool = True) -> HeteroGraph:
        if include == self.includes_identity:
            return self
        adj = self.edge_adj
        if include:
            adj = [CsrMatrix.identity(self.num_nodes)] + adj
        return HeteroGraph(self.registry, adj, self.features, include)

    def merged_adjacency(self) -> CsrMatrix:
        """All real edge types collapsed into one binary homogeneous graph."""
        rows = np.concatenate([a.row_ids() for a in self.edge_adj])
        cols = np.concatenate([a.col_indices for a in self.edge_adj])
        return CsrMatrix.from_coo(rows, cols, 1.0, (self.num_nodes, self.num_nodes),
                                  duplicates="collapse")

    def equals(self, other: HeteroGraph) -> bool:
        return (self.registry == other.registry
                and self.includes_identity == other.includes_identity
                and len(self.adj) == len(other.adj)
                and all(a.equals(b) for a, b in zip(self.adj, other.adj))
                and np.array_equal(self.features, other.features))


@dataclass(eq=False)
class LabeledSplit:
    """Labels for one target node type and disjoint train/val/test node sets.

    ``labels`` is indexed by global node id; unlabeled nodes hold -1.
    """

    labels: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    target_type: str | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        parts = np.concatenate([self.train, self.val, self.test])
        if len(np.unique(parts)) != len(parts):
            raise ValueError("train/val/test splits overlap or repeat nodes")
        if len(parts) and (parts.min() < 0 or parts.max() >= len(self.labels)):
            raise ValueError("split node id out of range")
        if np.any(self.labels[parts] < 0):
            raise ValueError("every split node needs a label")
        present = self.labels[self.labels >= 0]
        if len(present) and not np.array_equal(np.unique(present), np.arange(present.max() + 1)):
            raise ValueError("class ids must be dense in [0, num_classes)")

    @property
    def num_classes(self) -> int:
        present = self.labels[self.labels >= 0]
        return int(present.max()) + 1 if len(present) else 0

    def equals(self, other: LabeledSplit) -> bool:
        return (np.array_equal(self.labels, other.labels)
                and np.array_equal(self.train, other.train)
                and np.array_equal(self.val, other.val)
                and np.array_equal(self.test, other.test)
                and self.target_type == other.target_type)
