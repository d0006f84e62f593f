"""Heterogeneous graph data model, dataset files and synthetic generator."""

from .graph import IDENTITY, EdgeType, HeteroGraph, LabeledSplit, NodeType, TypeRegistry
from .io import DatasetError, load_dataset, save_dataset
from .synthetic import (
    InfeasibleSpec,
    PlantedTruth,
    Relation,
    SyntheticSpec,
    desk_spec,
    generate_synthetic,
    planted_labels,
    planted_spec,
    tie_priority,
)

__all__ = [
    "IDENTITY", "DatasetError", "EdgeType", "HeteroGraph", "InfeasibleSpec", "LabeledSplit",
    "NodeType", "PlantedTruth", "Relation", "SyntheticSpec", "TypeRegistry",
    "desk_spec", "generate_synthetic", "load_dataset", "planted_labels", "planted_spec",
    "save_dataset", "tie_priority",
]
