"""On-disk dataset format: a JSON manifest plus TSV files.

Manifest layout::

    {
      "node_types": [{"name": "A", "count": 40}, ...],
      "edge_types": [{"name": "PA", "src": "P", "dst": "A", "file": "edges_PA.tsv"}, ...],
      "features_file": "features.tsv",
      "labels_file": "labels.tsv",
      "splits": {"train": "train.tsv", "val": "val.tsv", "test": "test.tsv"},
      "target_type": "A",            (optional; inferred from labeled nodes)
      "include_identity": false      (optional; default for load_dataset)
    }

Edge files hold two integer columns ``src<TAB>dst``; each line sets
A[dst, src] = 1. Features: one tab-separated row per node. Labels:
``node_id<TAB>class_id``. Split files: one node id per line. Node ids are
global over all types, assigned contiguously in ``node_types`` order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..sparse import CsrMatrix
from .graph import EdgeType, HeteroGraph, LabeledSplit, TypeRegistry


class DatasetError(ValueError):
    """A manifest or data file failed validation."""


def _read_rows(path: Path, ncols: int | None, kind=int):
    if not path.exists():
        raise DatasetError(f"{path}: file not found")
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if ncols is not None and len(parts) != ncols:
                raise DatasetError(f"{path}:{lineno}: expected {ncols} columns, got {len(parts)}")
            try:
                rows.append(([kind(p) for p in parts], lineno))
            except ValueError as err:
                raise DatasetError(f"{path}:{lineno}: {err}") from None
    return rows


def _load_edges(path: Path, etype: EdgeType, registry: TypeRegistry) -> CsrMatrix:
    n = registry.num_nodes
    src_t, dst_t = registry.node_type(etype.src), registry.node_type(etype.dst)
    srcs, dsts = [], []
    for (src, dst), lineno in _read_rows(path, 2):
        for node, t, role in ((src, src_t, "src"), (dst, dst_t, "dst")):
            if node < 0 or node >= n:
                raise DatasetError(f"{path}:{lineno}: {role} node id {node} out of range [0, {n})")
            if not t.start <= node < t.stop:
                raise DatasetError(
                    f"{path}:{lineno}: {role} node {node} is not of type {t.name!r} "
                    f"required by edge type {etype.name!r}")
        srcs.append(src)
        dsts.append(dst)
    return CsrMatrix.from_coo(dsts, srcs, 1.0, (n, n), duplicates="collapse")


def load_dataset(manifest_path, include_identity: bool | None = None):
    """Read a manifest and its files into ``(HeteroGraph, LabeledSplit)``.

    ``include_identity=None`` defers to the manifest's ``include_identity``
    key (default False).
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"{manifest_path}: manifest not found")
    try:
        man = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as err:
        raise DatasetError(f"{manifest_path}: invalid JSON ({err})") from None
    root = manifest_path.parent
    for key in ("node_types", "edge_types", "features_file", "labels_file", "splits"):
        if key not in man:
            raise DatasetError(f"{manifest_path}: missing key {key!r}")

    try:
        registry = TypeRegistry(
            [(t["name"], int(t["count"])) for t in man["node_types"]],
            [EdgeType(e["name"], e["src"], e["dst"]) for e in man["edge_types"]],
        )
    except (KeyError, ValueError) as err:
        raise DatasetError(f"{manifest_path}: {err}") from None
    n = registry.num_nodes

    adj = [_load_edges(root / e["file"], et, registry)
           for e, et in zip(man["edge_types"], registry.edge_types)]

    feat_path = root / man["features_file"]
    feat_rows = _read_rows(feat_path, None, float)
    if len(feat_rows) != n:
        raise DatasetError(f"{feat_path}: expected {n} feature rows, got {len(feat_rows)}")
    widths = {len(r) for r, _ in feat_rows}
    if len(widths) > 1:
        raise DatasetError(f"{feat_path}: ragged feature rows (widths {sorted(widths)})")
    features = np.array([r for r, _ in feat_rows], dtype=np.float64).reshape(n, -1)
    if not np.all(np.isfinite(features)):
        raise DatasetError(f"{feat_path}: non-finite feature value")

    labels = np.full(n, -1, dtype=np.int64)
    lab_path = root / man["labels_file"]
    for (node, cls), lineno in _read_rows(lab_path, 2):
        if not 0 <= node < n:
            raise DatasetError(f"{lab_path}:{lineno}: node id {node} out of range [0, {n})")
        if cls < 0:
            raise DatasetError(f"{lab_path}:{lineno}: negative class id")
        labels[node] = cls

    splits = {}
    for part in ("train", "val", "test"):
        path = root / man["splits"][part]
        ids = []
        for (node,), lineno in _read_rows(path, 1):
            if not 0 <= node < n:
                raise DatasetError(f"{path}:{lineno}: node id {node} out of range [0, {n})")
            ids.append(node)
        splits[part] = np.array(ids, dtype=np.int64)

    target = man.get("target_type")
    labeled = np.flatnonzero(labels >= 0)
    kinds = {registry.node_types[i].name for i in np.unique(registry.type_of(labeled))}
    if target is None and len(kinds) == 1:
        target = kinds.pop()
    elif target is not None and kinds - {target}:
        raise DatasetError(f"{lab_path}: labeled nodes outside target type {target!r}")
    elif target is None and len(kinds) > 1:
        raise DatasetError(f"{lab_path}: labels span several node types {sorted(kinds)}")

    try:
        split = LabeledSplit(labels, splits["train"], splits["val"], splits["test"], target)
    except ValueError as err:
        raise DatasetError(f"{manifest_path}: {err}") from None

    if include_identity is None:
        include_identity = bool(man.get("include_identity", False))
    graph = HeteroGraph(registry, adj, features, False).with_identity(include_identity)
    return graph, split


def _write_lines(path: Path, lines) -> None:
    with open(path, "w") as fh:
        for line in lines:
            fh.write(line + "\n")


def save_dataset(graph: HeteroGraph, split: LabeledSplit, directory) -> Path:
    """Write ``graph`` and ``split`` under ``directory``; returns the manifest path.

    Floats are written with ``repr`` so the round trip is bit-exact.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise DatasetError(f"{directory}: cannot create directory ({err})") from None
    reg = graph.registry
    edge_entries = []
    for et, a in zip(reg.edge_types, graph.edge_adj):
        fname = f"edges_{et.name}.tsv"
        # A[dst, src] -> "src<TAB>dst"; emit in (src, dst) order
        rows, cols = a.row_ids(), a.col_indices
        order = np.lexsort((rows, cols))
        _write_lines(directory / fname, (f"{s}\t{d}" for s, d in zip(cols[order], rows[order])))
        edge_entries.append({"name": et.name, "src": et.src, "dst": et.dst, "file": fname})

    _write_lines(directory / "features.tsv",
                 ("\t".join(repr(float(v)) for v in row) for row in graph.features.tolist()))
    labeled = np.flatnonzero(split.labels >= 0)
    _write_lines(directory / "labels.tsv", (f"{i}\t{split.labels[i]}" for i in labeled))
    for part in ("train", "val", "test"):
        _write_lines(directory / f"{part}.tsv", (str(i) for i in getattr(split, part)))

    manifest = {
        "node_types": [{"name": t.name, "count": t.count} for t in reg.node_types],
        "edge_types": edge_entries,
        "features_file": "features.tsv",
        "labels_file": "labels.tsv",
        "splits": {p: f"{p}.tsv" for p in ("train", "val", "test")},
        "include_identity": graph.includes_identity,
    }
    if split.target_type is not None:
        manifest["target_type"] = split.target_type
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path
