from __future__ import annotations

import itertools
import json
import os
import warnings

import numpy as np
import pytest

from conftest import typed_graph
from gtnet.data.graph import EdgeType, TypeRegistry
from gtnet.interpret import (
    MetaPathDescriptor,
    attention_report,
    enumerate_metapaths,
    format_metapaths,
    metapath_report,
    selector_alphas,
    to_jsonl,
    top_k_between,
)
from gtnet.model import GtnConfig, gtn_forward, init_params

APC = TypeRegistry([("A", 2), ("P", 2), ("C", 1)],
                   [EdgeType("AP", "A", "P"), EdgeType("PA", "P", "A"), EdgeType("PC", "P", "C")])


def random_alphas(rng, shape):
    return selector_alphas(rng.standard_normal(shape))


def test_single_edge_type_gives_one_path():
    reg = TypeRegistry([("A", 3)], [EdgeType("AA", "A", "A")])
    paths = enumerate_metapaths(np.ones((3, 1)), reg)
    assert len(paths) == 1 and paths[0].weight == 1.0 and paths[0].node_type_string == "AAAA"


def test_two_selectors_raw_weights_sum_to_one(rng):
    reg = TypeRegistry([("A", 2), ("P", 2)], [EdgeType("AP", "A", "P"), EdgeType("PA", "P", "A")])
    alpha = random_alphas(rng, (2, 2))
    raw = sum(alpha[0, i] * alpha[1, j] for i, j in itertools.product(range(2), repeat=2))
    assert abs(raw - 1.0) <= 1e-12
    rep = metapath_report(alpha, reg)
    kept = sum(d.weight for d in rep.channels[0])
    assert abs(kept + rep.dropped_weight[0] - 1.0) <= 1e-12
    # AP then PA and PA then AP are the consistent pairs
    assert {d.node_type_string for d in rep.channels[0]} == {"APA", "PAP"}


@pytest.mark.parametrize("shape", [(3, 2, 4), (4, 3, 4), (2, 1, 3)])
def test_kept_plus_dropped_is_one(rng, shape):
    # K=4 includes identity, K=3 does not
    rep = metapath_report(random_alphas(rng, shape), APC)
    for ch, dropped in zip(rep.channels, rep.dropped_weight):
        assert abs(sum(d.weight for d in ch) + dropped - 1.0) <= 1e-9


def test_identity_elision_sums_equivalent_sequences():
    alpha = np.array([[0.5, 0.5, 0, 0], [0.5, 0.5, 0, 0]])   # identity and AP at both selectors
    paths = {d.node_type_string: d for d in enumerate_metapaths(alpha, APC)}
    # (I, AP) and (AP, I) both collapse to AP; (AP, AP) is inconsistent
    assert paths["AP"].weight == 0.5 and paths["(identity)"].weight == 0.25
    assert paths["AP"].edge_type_sequence == ("AP",) and paths["AP"].endpoints == ("A", "P")


def test_hop_order_and_sorting():
    # selector 0 is the left factor: raw (PC, AP) is the path A -> P -> C
    alpha = np.array([[0, 0, 0, 1.0], [0, 1.0, 0, 0]])
    d = enumerate_metapaths(alpha, APC)[0]
    assert d.edge_type_sequence == ("AP", "PC") and d.node_type_string == "APC"
    ties = enumerate_metapaths(np.array([[0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5]]), APC)
    weights = [x.weight for x in ties]
    assert weights == sorted(weights, reverse=True)
    same = [x.node_type_string for x in ties if x.weight == ties[0].weight]
    assert same == sorted(same)


def test_min_weight_filter(rng):
    alpha = random_alphas(rng, (3, 4))
    full = enumerate_metapaths(alpha, APC)
    cut = enumerate_metapaths(alpha, APC, min_weight=0.05)
    assert cut == [d for d in full if d.weight >= 0.05]
    with pytest.raises(ValueError):
        enumerate_metapaths(alpha, APC, min_weight=1.5)


def test_wrong_k_and_bad_alphas():
    with pytest.raises(ValueError, match="K=5"):
        enumerate_metapaths(np.full((2, 5), 0.2), APC)
    with pytest.raises(ValueError, match="probability"):
        enumerate_metapaths(np.full((2, 4), 0.3), APC)


def test_beam_search_warns(rng):
    reg = TypeRegistry([("A", 2)], [EdgeType(f"E{i}", "A", "A") for i in range(9)])
    alpha = random_alphas(rng, (7, 10))   # 10^7 raw sequences
    with pytest.warns(RuntimeWarning, match="beam"):
        rep = metapath_report(alpha, reg)
    assert len(rep.channels[0]) <= 10 ** 4
    assert abs(sum(d.weight for d in rep.channels[0]) + rep.dropped_weight[0] - 1.0) <= 1e-9


def test_exhaustive_does_not_warn(rng):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        metapath_report(random_alphas(rng, (3, 2, 4)), APC)


def _path_matrix(graph, hops):
    n = graph.num_nodes
    m = np.eye(n)
    for h in hops:
        m = graph.adj[graph.candidate_names.index(h)].to_dense() @ m
    return m


@pytest.mark.parametrize("num_layers", [1, 2])
def test_reconstruction_matches_model(rng, num_layers):
    graph = typed_graph(rng, edges=(("AP", "A", "P"), ("PA", "P", "A")))   # K=3: identity, AP, PA
    cfg = GtnConfig(num_layers=num_layers, num_channels=2, hidden_dim=3, classifier_hidden=3)
    params = init_params(cfg, 3, graph.num_features, 2)
    params.selectors = rng.standard_normal(params.selectors.shape)
    out = gtn_forward(graph, params, cfg)
    rep = metapath_report(out.alphas, graph.registry)
    for c in range(2):
        left = np.eye(graph.num_nodes)
        if num_layers == 2:
            # model's own degrees of the first-layer output
            first = out.alphas[:2, c]
            q = [sum(first[s, k] * graph.adj[k].to_dense() for k in range(3)) for s in range(2)]
            deg = (q[0] @ q[1]).sum(axis=1)
            left = np.diag(np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0))
        recon = sum(d.weight * left @ _path_matrix(graph, d.edge_type_sequence) for d in rep.channels[c])
        assert np.max(np.abs(recon - out.metapath_adj[c].to_dense())) <= 1e-6


def test_top_k_between():
    alpha = np.array([[0.4, 0.2, 0.4, 0.0], [0.1, 0.6, 0.2, 0.1]])
    paths = enumerate_metapaths(alpha, APC)
    top = top_k_between(paths, "A", 10)
    assert top and all(d.endpoints == ("A", "A") for d in top)
    assert [d.node_type_string for d in top] == ["APA"]
    assert top_k_between(paths, "C", 3) == []
    with pytest.raises(ValueError):
        top_k_between(paths, "A", 0)


def test_attention_report(rng):
    cfg = GtnConfig(num_layers=2, num_channels=3, selector_jitter=0.0)
    params = init_params(cfg, 4, 2, 2)
    rep = attention_report(params, APC)
    assert len(rep.rows) == 3 * 3 and rep.names[0] == "identity"
    assert all(np.allclose(a, 0.25, atol=0, rtol=0) for _, _, a in rep.rows)
    rec = rep.records()[0]
    assert set(rec) == {"layer", "channel", "alpha"} and abs(sum(rec["alpha"].values()) - 1) <= 1e-12
    assert "identity" in rep.table().splitlines()[0]


def test_records_and_text():
    rep = metapath_report(np.array([[[0.5, 0.5, 0, 0]], [[0, 1.0, 0, 0]]]), APC)
    rows = [json.loads(line) for line in to_jsonl(rep.records()).splitlines()]
    assert {r["channel"] for r in rows} == {0, "combined"}
    assert set(rows[0]) == {"channel", "sequence", "path_string", "weight"}
    assert "AP" in format_metapaths(rep.combined)
    d = MetaPathDescriptor((), "(identity)", 1.0, (None, None))
    assert d.to_record()["channel"] == "combined"


@pytest.mark.skipif(not os.environ.get("GTNET_DBLP"), reason="set GTNET_DBLP to a DBLP manifest")
def test_dblp_rankings_informational():
    # Optional: with a user-supplied DBLP dataset, report how the learned
    # rankings compare to the published top-3 lists.
    from gtnet.data import load_dataset
    from gtnet.training import TrainConfig, train
    graph, split = load_dataset(os.environ["GTNET_DBLP"])
    cfg = GtnConfig(num_layers=3)
    params, hist = train(graph, split, cfg, TrainConfig(max_epochs=40, patience=10))
    paths = enumerate_metapaths(selector_alphas(params.selectors), graph.registry)
    between = {d.node_type_string for d in top_k_between(paths, split.target_type, 3)}
    print("top between targets:", sorted(between), "published: APCPA, APAPA, APA")
    print("top overall:", [d.node_type_string for d in paths[:3]], "published: CPCPA, APCPA, CP")
    assert between
