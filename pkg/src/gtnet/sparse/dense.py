"""Dense kernels for the GCN head and classifier.

Dense matrices are plain float64 numpy arrays; these wrappers only add the
shape checks the rest of the package relies on.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .csr import ShapeError


def as_dense(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {x.shape}")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return a @ b


def add_bias(x: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if bias.shape != (x.shape[1],):
        raise ShapeError(f"add_bias: bias {bias.shape} for matrix {x.shape}")
    return x + bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def row_softmax(x: np.ndarray) -> np.ndarray:
    """Softmax along the last axis (works for vectors and stacked selectors)."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def concat_cols(mats: Sequence[np.ndarray]) -> np.ndarray:
    if not mats:
        raise ShapeError("concat_cols needs at least one matrix")
    n = mats[0].shape[0]
    for m in mats:
        if m.ndim != 2 or m.shape[0] != n:
            raise ShapeError(f"concat_cols: row counts differ ({n} vs {m.shape})")
    return np.concatenate(mats, axis=1)
