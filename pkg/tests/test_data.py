from __future__ import annotations

import json
from collections import Counter

import numpy as np
import pytest

from conftest import dblp_shaped
from gtnet.data import (
    DatasetError,
    InfeasibleSpec,
    Relation,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
    tie_priority,
)
from gtnet.data.graph import EdgeType, HeteroGraph, LabeledSplit, TypeRegistry
from gtnet.sparse import CsrMatrix


def small_spec(seed=0, noise=0.0, **kw):
    # 60 nodes, planted path of length 2: C -> P -> A
    base = dict(node_types=[("A", 24), ("P", 18), ("C", 18)],
                relations=[Relation("A", "P", 2.0), Relation("P", "C", 2.0)],
                planted_path=("CP", "PA"), num_classes=3, noise=noise, seed=seed)
    base.update(kw)
    return SyntheticSpec(**base)


def write_manifest(root, edges=None, node_types=None, labels="0\t0\n1\t1\n", splits=None):
    node_types = node_types or [{"name": "A", "count": 2}, {"name": "B", "count": 2}]
    edges = edges if edges is not None else {"AB": ("A", "B", "0\t2\n1\t3\n")}
    man = {"node_types": node_types, "edge_types": [], "features_file": "x.tsv",
           "labels_file": "y.tsv", "splits": {"train": "tr.tsv", "val": "va.tsv", "test": "te.tsv"}}
    for name, (src, dst, body) in edges.items():
        (root / f"{name}.tsv").write_text(body)
        man["edge_types"].append({"name": name, "src": src, "dst": dst, "file": f"{name}.tsv"})
    n = sum(t["count"] for t in node_types)
    (root / "x.tsv").write_text("".join(f"{i}.0\t1.5\n" for i in range(n)))
    (root / "y.tsv").write_text(labels)
    splits = splits or {"tr.tsv": "0\n", "va.tsv": "1\n", "te.tsv": ""}
    for fname, body in splits.items():
        (root / fname).write_text(body)
    (root / "manifest.json").write_text(json.dumps(man))
    return root / "manifest.json"


def test_load_minimal_manifest(tmp_path):
    graph, split = load_dataset(write_manifest(tmp_path))
    assert graph.num_nodes == 4 and len(graph.adj) == 1
    assert graph.adj[0].to_dense()[2, 0] == 1.0   # edge 0 -> 2 stored at [dst, src]
    assert split.target_type == "A" and split.num_classes == 2
    with_i, _ = load_dataset(tmp_path, include_identity=True)
    assert with_i.includes_identity and with_i.adj[0].equals(CsrMatrix.identity(4))


def test_empty_edge_file_gives_zero_matrix(tmp_path):
    graph, _ = load_dataset(write_manifest(tmp_path, edges={"AB": ("A", "B", "")}))
    assert graph.adj[0].nnz == 0 and graph.adj[0].shape == (4, 4)


def test_out_of_range_node_names_file_and_line(tmp_path):
    with pytest.raises(DatasetError, match=r"AB\.tsv:2: .*out of range"):
        load_dataset(write_manifest(tmp_path, edges={"AB": ("A", "B", "0\t2\n1\t9\n")}))


def test_type_inconsistent_edge_rejected(tmp_path):
    with pytest.raises(DatasetError, match=r"AB\.tsv:1: .*not of type"):
        load_dataset(write_manifest(tmp_path, edges={"AB": ("A", "B", "2\t3\n")}))


def test_duplicate_edges_collapse(tmp_path):
    graph, _ = load_dataset(write_manifest(tmp_path, edges={"AB": ("A", "B", "0\t2\n0\t2\n")}))
    assert graph.adj[0].nnz == 1 and graph.adj[0].values[0] == 1.0


def test_missing_files(tmp_path):
    with pytest.raises(DatasetError, match="manifest not found"):
        load_dataset(tmp_path / "nope.json")
    path = write_manifest(tmp_path)
    (tmp_path / "x.tsv").unlink()
    with pytest.raises(DatasetError, match="file not found"):
        load_dataset(path)


def test_bad_feature_rows_and_labels(tmp_path):
    path = write_manifest(tmp_path)
    (tmp_path / "x.tsv").write_text("1\t2\n3\n4\t5\n6\t7\n")
    with pytest.raises(DatasetError, match="ragged"):
        load_dataset(path)
    path = write_manifest(tmp_path, splits={"tr.tsv": "0\n", "va.tsv": "0\n", "te.tsv": ""})
    with pytest.raises(DatasetError, match="overlap"):
        load_dataset(path)


def test_num_classes_inferred_from_labels(tmp_path):
    path = write_manifest(tmp_path, labels="0\t0\n1\t2\n2\t1\n3\t3\n",
                          node_types=[{"name": "A", "count": 4}, {"name": "B", "count": 2}],
                          edges={"AB": ("A", "B", "0\t4\n")},
                          splits={"tr.tsv": "0\n1\n", "va.tsv": "2\n", "te.tsv": "3\n"})
    _, split = load_dataset(path)
    assert split.num_classes == 4


def test_dblp_shaped_manifest(tmp_path):
    graph, split = dblp_shaped()
    path = save_dataset(graph, split, tmp_path)
    g2, s2 = load_dataset(path)
    assert g2.num_nodes == 18405 and len(g2.adj) == 4 and g2.num_features == 334
    assert (len(s2.train), len(s2.val), len(s2.test)) == (800, 400, 2857)
    assert g2.equals(graph) and s2.equals(split)


def _check_types(graph: HeteroGraph):
    reg = graph.registry
    for e, a in zip(reg.edge_types, graph.edge_adj):
        s, d = reg.node_type(e.src), reg.node_type(e.dst)
        rows, cols = a.row_ids(), a.col_indices
        assert np.all((rows >= d.start) & (rows < d.stop))
        assert np.all((cols >= s.start) & (cols < s.stop))


def test_synthetic_respects_types_and_reverse_relations():
    graph, split, truth = generate_synthetic(small_spec())
    _check_types(graph)
    names = [e.name for e in graph.registry.edge_types]
    assert names == ["AP", "PA", "PC", "CP"]
    assert np.array_equal(graph.adj[0].to_dense(), graph.adj[1].to_dense().T)
    assert truth.path_string == "CPA" and split.target_type == "A"


def _walk_oracle(graph, truth, spec):
    """Labels by brute-force enumeration of planted-path walks from far nodes."""
    reg = graph.registry
    by_name = dict(zip([e.name for e in reg.edge_types], graph.adj))
    out_edges = {}
    for name in truth.path:
        a = by_name[name]
        lists = {}
        for dst, src in zip(a.row_ids(), a.col_indices):
            lists.setdefault(int(src), []).append(int(dst))
        out_edges[name] = lists
    far = reg.node_type(truth.far_type)
    tgt = reg.node_type(truth.target_type)
    votes = np.zeros((graph.num_nodes, spec.num_classes))
    for start in range(far.start, far.stop):
        frontier = Counter({start: 1})
        for name in truth.path:
            nxt = Counter()
            for node, cnt in frontier.items():
                for v in out_edges[name].get(node, []):
                    nxt[v] += cnt
            frontier = nxt
        for node, cnt in frontier.items():
            votes[node, truth.groups[start]] += cnt
    prio = tie_priority(spec.seed, graph.num_nodes, spec.num_classes)
    labels = {}
    for i in range(tgt.start, tgt.stop):
        best = votes[i].max()
        tied = [c for c in range(spec.num_classes) if votes[i, c] == best]
        labels[i] = max(tied, key=lambda c: prio[i, c])
    return labels


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_synthetic_labels_match_walk_oracle(seed):
    spec = small_spec(seed)
    graph, split, truth = generate_synthetic(spec)
    assert graph.num_nodes == 60
    oracle = _walk_oracle(graph, truth, spec)
    present = sorted(set(oracle.values()))
    remap = {c: i for i, c in enumerate(present)}   # generator keeps ids dense
    for node, lab in oracle.items():
        assert split.labels[node] == remap[lab]


def test_synthetic_features_only_on_far_type():
    graph, _, truth = generate_synthetic(small_spec())
    reg = graph.registry
    far = reg.type_mask(truth.far_type)
    group_cols = graph.features[:, :3]
    assert np.all(group_cols[~far] == 0)
    assert np.all(group_cols[far].sum(axis=1) == 1)


def test_synthetic_determinism_byte_identical(tmp_path):
    for d in ("a", "b"):
        g, s, _ = generate_synthetic(small_spec(seed=4, noise=0.1))
        save_dataset(g, s, tmp_path / d)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synthetic_noise_rate_within_binomial_band():
    spec = SyntheticSpec([("A", 3000), ("P", 600), ("C", 300)],
                         [Relation("A", "P", 2.0), Relation("P", "C", 2.0)],
                         ("CP", "PA"), num_classes=3, noise=0.1, seed=7)
    graph, split, truth = generate_synthetic(spec)
    noised = np.setdiff1d(np.flatnonzero(split.labels >= 0), split.test)
    agree = np.mean(split.labels[noised] == truth.clean_labels[noised])
    sd = np.sqrt(0.9 * 0.1 / len(noised))
    assert abs(agree - 0.9) <= 4 * sd
    # test labels are never flipped
    assert np.array_equal(split.labels[split.test], truth.clean_labels[split.test])


def test_save_load_round_trip(tmp_path):
    graph, split, _ = generate_synthetic(small_spec(noise=0.2))
    path = save_dataset(graph, split, tmp_path)
    g2, s2 = load_dataset(path)
    assert g2.equals(graph) and s2.equals(split)
    for a in g2.adj:
        a.validate()
    man = json.loads(path.read_text())
    listed = {e["file"] for e in man["edge_types"]}
    assert listed == {f"edges_{e.name}.tsv" for e in graph.registry.edge_types}
    assert all((tmp_path / f).exists() for f in listed)
    # load then save reproduces the files byte for byte
    save_dataset(g2, s2, tmp_path / "again")
    for f in listed | {"features.tsv", "labels.tsv", "manifest.json"}:
        assert (tmp_path / f).read_bytes() == (tmp_path / "again" / f).read_bytes()


def test_save_unwritable(tmp_path):
    graph, split, _ = generate_synthetic(small_spec())
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(DatasetError):
        save_dataset(graph, split, blocker / "sub")


@pytest.mark.parametrize("kw, msg", [
    (dict(node_types=[("A", 24), ("P", 0), ("C", 18)]), "needs nodes"),
    (dict(planted_path=("PA", "CP")), "not type-consistent"),
    (dict(planted_path=("XY",)), "unknown edge type"),
    (dict(noise=1.0), "noise"),
    (dict(num_classes=1), "two classes"),
])
def test_infeasible_specs(kw, msg):
    with pytest.raises(InfeasibleSpec, match=msg):
        generate_synthetic(small_spec(**kw))


def test_spec_dict_round_trip(tmp_path):
    spec = small_spec(noise=0.05)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec.to_dict()))
    again = SyntheticSpec.from_file(path)
    assert again.to_dict() == spec.to_dict()
    with pytest.raises(InfeasibleSpec, match="unknown"):
        SyntheticSpec.from_dict({**spec.to_dict(), "density": 0.1})


def test_registry_and_graph_validation():
    reg = TypeRegistry([("A", 2), ("B", 3)], [EdgeType("AB", "A", "B")])
    assert reg.num_nodes == 5
    assert list(reg.type_of([0, 1, 2, 4])) == [0, 0, 1, 1]
    with pytest.raises(ValueError):
        TypeRegistry([("A", 2)], [EdgeType("AB", "A", "B")])
    with pytest.raises(ValueError):
        TypeRegistry([("A", 2)], [EdgeType("identity", "A", "A")])
    with pytest.raises(ValueError):
        HeteroGraph(reg, [CsrMatrix.zeros(4, 4)], np.zeros((5, 1)))
    with pytest.raises(ValueError):
        HeteroGraph(reg, [CsrMatrix.zeros(5, 5), CsrMatrix.zeros(5, 5)], np.zeros((5, 1)), True)


def test_merged_adjacency_is_binary_union():
    graph, _, _ = generate_synthetic(small_spec())
    merged = graph.merged_adjacency().to_dense()
    union = sum(a.to_dense() for a in graph.edge_adj) > 0
    assert np.array_equal(merged, union.astype(float))


def test_split_validation():
    labels = np.array([0, 1, -1, 0])
    with pytest.raises(ValueError, match="label"):
        LabeledSplit(labels, [0], [2], [])
    with pytest.raises(ValueError, match="dense"):
        LabeledSplit(np.array([0, 2, -1, 0]), [0], [1], [])
