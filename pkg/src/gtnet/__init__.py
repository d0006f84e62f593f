"""GTN: learned soft meta-path graphs for node classification on heterogeneous graphs.

Sparse kernels (compiled when available), a small reverse-mode tape, the GTN
model, training, and meta-path interpretation.
"""

from .model import GtnConfig, GtnParams, gtn_forward
from .training import TrainConfig, evaluate_f1, train

__version__ = "0.1.0"

__all__ = ["GtnConfig", "GtnParams", "TrainConfig", "evaluate_f1", "gtn_forward", "train"]
