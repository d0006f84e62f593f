"""CSR sparse algebra with a compiled kernel core and a numpy fallback.

``BACKEND`` reports which kernels are active ("cython" or "numpy").
"""

from . import _backend
from .csr import (
    CombinePlan,
    CsrMatrix,
    DegreeVector,
    DomainError,
    ShapeError,
    add_identity,
    convex_combine,
    masked_row_dots,
    row_degrees,
    row_normalize,
    sampled_dense_dots,
    spmm_sd,
    spmm_ss,
    transpose,
)
from .dense import add_bias, as_dense, concat_cols, matmul, relu, row_softmax

available_backends = _backend.available_backends
use_backend = _backend.use_backend


def __getattr__(name):
    if name == "BACKEND":
        return _backend.BACKEND
    raise AttributeError(name)


__all__ = [
    "BACKEND", "CombinePlan", "CsrMatrix", "DegreeVector", "DomainError", "ShapeError",
    "add_bias", "add_identity", "as_dense", "available_backends", "concat_cols",
    "convex_combine", "masked_row_dots", "matmul", "relu", "row_degrees", "row_normalize",
    "row_softmax", "sampled_dense_dots", "spmm_sd", "spmm_ss", "transpose", "use_backend",
]
