from __future__ import annotations

import numpy as np
import pytest

from gtnet.data import generate_synthetic
from gtnet.data.graph import EdgeType, HeteroGraph, LabeledSplit, TypeRegistry
from gtnet.sparse import CsrMatrix, _backend, available_backends, use_backend

BACKENDS = sorted(available_backends())


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run the test once per importable kernel backend."""
    before = _backend.BACKEND
    use_backend(request.param)
    yield request.param
    use_backend(before)


def random_csr(rng, n_rows, n_cols, density=0.3, nonneg=False) -> CsrMatrix:
    mask = rng.random((n_rows, n_cols)) < density
    vals = rng.random((n_rows, n_cols)) + 0.1 if nonneg else rng.standard_normal((n_rows, n_cols))
    return CsrMatrix.from_dense(np.where(mask, vals, 0.0))


def typed_graph(rng, counts=(("A", 3), ("P", 3), ("C", 2)), density=0.5,
                edges=(("AP", "A", "P"), ("PA", "P", "A"), ("PC", "P", "C")),
                n_features=3, identity=True) -> HeteroGraph:
    """Small random heterogeneous graph that respects the edge-type conventions."""
    reg = TypeRegistry(list(counts), [EdgeType(*e) for e in edges])
    n = reg.num_nodes
    adj = []
    for e in reg.edge_types:
        s, d = reg.node_type(e.src), reg.node_type(e.dst)
        dense = np.zeros((n, n))
        block = (rng.random((d.count, s.count)) < density).astype(float)
        dense[d.start:d.stop, s.start:s.stop] = block
        adj.append(CsrMatrix.from_dense(dense))
    g = HeteroGraph(reg, adj, rng.standard_normal((n, n_features)))
    return g.with_identity(identity)


def split_for(graph: HeteroGraph, target: str, num_classes=2, seed=0) -> LabeledSplit:
    rng = np.random.default_rng(seed)
    t = graph.registry.node_type(target)
    ids = np.arange(t.start, t.stop)
    labels = np.full(graph.num_nodes, -1)
    labels[ids] = np.arange(len(ids)) % num_classes
    rng.shuffle(labels[ids])
    k = max(1, len(ids) // 2)
    return LabeledSplit(labels, ids[:k], ids[k:k + 1], ids[k + 1:], target)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk():
    from gtnet.data import desk_spec
    return generate_synthetic(desk_spec(0))


# Published DBLP totals (18405 nodes, 4 edge types, 334 features,
# 800/400/2857 split); the per-type split of nodes below is arbitrary.
DBLP_TYPES = [("A", 4100), ("P", 14285), ("C", 20)]
DBLP_EDGES = [("PA", "P", "A"), ("AP", "A", "P"), ("PC", "P", "C"), ("CP", "C", "P")]


def dblp_shaped(seed=0, num_classes=4):
    rng = np.random.default_rng(seed)
    reg = TypeRegistry(DBLP_TYPES, [EdgeType(*e) for e in DBLP_EDGES])
    n = reg.num_nodes
    a, p, c = (reg.node_type(x) for x in "APC")
    pa_src = rng.integers(p.start, p.stop, 20000)
    pa_dst = rng.integers(a.start, a.stop, 20000)
    pc_src = np.arange(p.start, p.stop)
    pc_dst = rng.integers(c.start, c.stop, p.count)
    coo = lambda r, col: CsrMatrix.from_coo(r, col, 1.0, (n, n), duplicates="collapse")
    adj = [coo(pa_dst, pa_src), coo(pa_src, pa_dst), coo(pc_dst, pc_src), coo(pc_src, pc_dst)]
    x = np.zeros((n, 334))
    x[np.arange(n), rng.integers(0, 334, n)] = 1.0
    labels = np.full(n, -1)
    ids = np.arange(a.start, a.start + 4057)
    labels[ids] = np.arange(len(ids)) % num_classes
    split = LabeledSplit(labels, ids[:800], ids[800:1200], ids[1200:], "A")
    return HeteroGraph(reg, adj, x), split
