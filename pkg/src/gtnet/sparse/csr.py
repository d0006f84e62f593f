"""Compressed sparse row matrices and the sparse kernel set used by GTN."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend


class ShapeError(ValueError):
    """Operand dimensions are incompatible."""


class DomainError(ValueError):
    """Input values fall outside an operation's domain."""


def _frozen(arr, dtype) -> np.ndarray:
    if (isinstance(arr, np.ndarray) and arr.dtype == dtype
            and arr.flags.c_contiguous and not arr.flags.writeable):
        return arr
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Immutable CSR matrix with int64 indices and float64 values.

    Canonical form: columns strictly increasing inside each row. Constructors
    in this module always produce canonical matrices; ``validate`` checks it.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "n_rows", int(self.n_rows))
        object.__setattr__(self, "n_cols", int(self.n_cols))
        object.__setattr__(self, "row_offsets", _frozen(self.row_offsets, np.int64))
        object.__setattr__(self, "col_indices", _frozen(self.col_indices, np.int64))
        object.__setattr__(self, "values", _frozen(self.values, np.float64))
        if len(self.row_offsets) != self.n_rows + 1:
            raise ShapeError(
                f"row_offsets has length {len(self.row_offsets)}, expected {self.n_rows + 1}"
            )
        if len(self.col_indices) != len(self.values):
            raise ShapeError("col_indices and values differ in length")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    def __repr__(self) -> str:
        return f"CsrMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz})"

    # -- constructors ---------------------------------------------------

    @classmethod
    def identity(cls, n: int) -> CsrMatrix:
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def zeros(cls, n_rows: int, n_cols: int) -> CsrMatrix:
        return cls(n_rows, n_cols, np.zeros(n_rows + 1), np.empty(0), np.empty(0))

    @classmethod
    def from_dense(cls, dense) -> CsrMatrix:
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2:
            raise ShapeError(f"expected a 2-D array, got shape {dense.shape}")
        rows, cols = np.nonzero(dense)
        ptr = np.zeros(dense.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=dense.shape[0]), out=ptr[1:])
        return cls(dense.shape[0], dense.shape[1], ptr, cols, dense[rows, cols])

    @classmethod
    def from_coo(cls, rows, cols, vals, shape, duplicates: str = "sum") -> CsrMatrix:
        """Build from coordinate triplets.

        ``duplicates="sum"`` adds repeated coordinates, ``"collapse"`` keeps a
        single entry with value 1.0 (binary incidence).
        """
        n_rows, n_cols = shape
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.broadcast_to(np.asarray(vals, dtype=np.float64), rows.shape)
        if len(rows) and (rows.min() < 0 or rows.max() >= n_rows
                          or cols.min() < 0 or cols.max() >= n_cols):
            raise ShapeError(f"coordinates out of range for shape {shape}")
        keys = rows * n_cols + cols
        if duplicates == "collapse":
            keys = np.unique(keys)
            vals = np.ones(len(keys))
        elif duplicates == "sum":
            keys, vals = _backend._pykernels._reduce_by_key(keys, vals.copy())
        else:
            raise ValueError(f"unknown duplicates policy {duplicates!r}")
        ptr, idx, val = _backend._pykernels._from_keys(keys, vals, n_rows, n_cols)
        return cls(n_rows, n_cols, ptr, idx, val)

    def with_values(self, values) -> CsrMatrix:
        """Same pattern, new values."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise ShapeError(f"values shape {values.shape} != pattern nnz {self.nnz}")
        return CsrMatrix(self.n_rows, self.n_cols, self.row_offsets, self.col_indices, values)

    # -- views ----------------------------------------------------------

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_offsets))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_ids(), self.col_indices] = self.values
        return out

    def keys(self) -> np.ndarray:
        """Linearized (row * n_cols + col) coordinates; sorted when canonical."""
        return self.row_ids() * self.n_cols + self.col_indices

    def same_pattern(self, other: CsrMatrix) -> bool:
        return (self.shape == other.shape
                and np.array_equal(self.row_offsets, other.row_offsets)
                and np.array_equal(self.col_indices, other.col_indices))

    def equals(self, other: CsrMatrix) -> bool:
        """Exact equality of pattern and values."""
        return self.same_pattern(other) and np.array_equal(self.values, other.values)

    def validate(self, allow_zeros: bool = False) -> None:
        """Raise ValueError if any CSR invariant is violated."""
        ptr, idx = self.row_offsets, self.col_indices
        if ptr[0] != 0 or ptr[-1] != self.nnz:
            raise ValueError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(ptr) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if self.nnz:
            if idx.min() < 0 or idx.max() >= self.n_cols:
                raise ValueError("column index out of range")
            same_row = self.row_ids()[1:] == self.row_ids()[:-1]
            if np.any(same_row & (idx[1:] <= idx[:-1])):
                raise ValueError("columns must be strictly increasing within a row")
        if not allow_zeros and np.any(self.values == 0.0):
            raise ValueError("explicitly stored zero")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite value")

    def drop_zeros(self, threshold: float = 0.0) -> CsrMatrix:
        """Remove entries with |value| <= threshold."""
        keep = np.abs(self.values) > threshold
        if keep.all():
            return self
        ptr = np.zeros(self.n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.row_ids()[keep], minlength=self.n_rows), out=ptr[1:])
        return CsrMatrix(self.n_rows, self.n_cols, ptr, self.col_indices[keep], self.values[keep])


DegreeVector = np.ndarray


def _check_inner(a: CsrMatrix, b: CsrMatrix, what: str) -> None:
    if a.n_cols != b.n_rows:
        raise ShapeError(f"{what}: {a.shape} @ {b.shape}")


def spmm_ss(a: CsrMatrix, b: CsrMatrix, prune: float = 0.0,
            drop_zeros: bool = True) -> CsrMatrix:
    """Sparse @ sparse.

    With ``drop_zeros`` (default) the result is canonical: exact zeros from
    cancellation, and entries with |v| <= prune, are removed. The autodiff
    layer passes ``drop_zeros=False`` to keep the symbolic pattern.
    """
    _check_inner(a, b, "spmm_ss")
    k = _backend.kernels
    ptr, idx, val = k.spgemm(a.row_offsets, a.col_indices, a.values,
                             b.row_offsets, b.col_indices, b.values, b.n_cols)
    out = CsrMatrix(a.n_rows, b.n_cols, ptr, idx, val)
    if drop_zeros:
        out = out.drop_zeros(prune)
    return out


def spmm_sd(a: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """Sparse @ dense."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or a.n_cols != x.shape[0]:
        raise ShapeError(f"spmm_sd: {a.shape} @ {x.shape}")
    return _backend.kernels.spmm_dense(a.row_offsets, a.col_indices, a.values, x)


def transpose(a: CsrMatrix) -> CsrMatrix:
    ptr, idx, val = _backend.kernels.transpose(a.row_offsets, a.col_indices, a.values, a.n_cols)
    return CsrMatrix(a.n_cols, a.n_rows, ptr, idx, val)


def row_degrees(a: CsrMatrix) -> DegreeVector:
    """Sum of stored values per row (0 for empty rows)."""
    return np.bincount(a.row_ids(), weights=a.values, minlength=a.n_rows).astype(np.float64)


def _safe_inverse(d: np.ndarray, power: float = 1.0) -> np.ndarray:
    out = np.zeros_like(d)
    nz = d != 0
    out[nz] = d[nz] ** -power
    return out


def row_normalize(a: CsrMatrix, mode: str = "inverse") -> CsrMatrix:
    """D^-1 A (``inverse``) or D^-1/2 A D^-1/2 (``symmetric``).

    Rows with zero degree stay empty; no self-loops are added here.
    """
    if a.nnz and a.values.min() < 0:
        raise DomainError("row_normalize requires nonnegative entries")
    deg = row_degrees(a)
    if mode == "inverse":
        scale = _safe_inverse(deg)[a.row_ids()]
    elif mode == "symmetric":
        if a.n_rows != a.n_cols:
            raise ShapeError("symmetric normalization needs a square matrix")
        s = _safe_inverse(deg, 0.5)
        scale = s[a.row_ids()] * s[a.col_indices]
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    return a.with_values(a.values * scale)


class CombinePlan:
    """Union pattern of a fixed list of same-shape matrices.

    Building the plan sorts once; every later weighted sum over the same
    matrices is a single ``bincount``. ``positions[k][p]`` is where entry p of
    matrix k lands in the union.
    """

    def __init__(self, mats: Sequence[CsrMatrix]):
        if not mats:
            raise ValueError("need at least one matrix")
        shape = mats[0].shape
        for m in mats:
            if m.shape != shape:
                raise ShapeError(f"mixed shapes {shape} and {m.shape}")
        self.mats = list(mats)
        self.shape = shape
        all_keys = np.concatenate([m.keys() for m in mats])
        union, inverse = np.unique(all_keys, return_inverse=True)
        bounds = np.cumsum([0] + [m.nnz for m in mats])
        self.positions = [inverse[bounds[i]:bounds[i + 1]] for i in range(len(mats))]
        self._inverse = inverse
        self._stacked = np.concatenate([m.values for m in mats])
        self._counts = np.array([m.nnz for m in mats])
        ptr, idx, _ = _backend._pykernels._from_keys(union, np.zeros(len(union)), *shape)
        self.pattern = CsrMatrix(shape[0], shape[1], ptr, idx, np.zeros(len(union)))

    def combine(self, weights, keep_inactive: bool = True) -> CsrMatrix:
        """sum_k weights[k] * mats[k] on the union pattern.

        With ``keep_inactive=False`` matrices whose weight is exactly 0 do not
        contribute to the pattern, so a one-hot weight returns an exact copy.
        """
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(self.mats),):
            raise ShapeError(f"need {len(self.mats)} weights, got shape {weights.shape}")
        if not keep_inactive and np.any(weights == 0.0):
            active = [m for m, w in zip(self.mats, weights) if w != 0.0]
            if not active:
                return CsrMatrix.zeros(*self.shape)
            return CombinePlan(active).combine(weights[weights != 0.0])
        vals = np.bincount(self._inverse, weights=self._stacked * np.repeat(weights, self._counts),
                           minlength=self.pattern.nnz)
        return self.pattern.with_values(vals)

    def weight_grad(self, grad_values: np.ndarray) -> np.ndarray:
        """d<G, combine(w)>/dw_k = sum_p G[positions_k[p]] * mats[k].values[p]."""
        return np.array([np.dot(grad_values[pos], m.values)
                         for pos, m in zip(self.positions, self.mats)])


def convex_combine(mats: Sequence[CsrMatrix], alpha, tol: float = 1e-9,
                   plan: CombinePlan | None = None) -> CsrMatrix:
    """sum_k alpha_k mats[k] with alpha on the probability simplex.

    The pattern is the union over matrices with nonzero weight.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (len(mats),):
        raise ShapeError(f"alpha has shape {alpha.shape}, expected ({len(mats)},)")
    if np.any(alpha < 0) or abs(alpha.sum() - 1.0) > tol:
        raise DomainError(f"alpha must be nonnegative and sum to 1 (sum={alpha.sum()!r})")
    if plan is None:
        plan = CombinePlan(mats)
    return plan.combine(alpha, keep_inactive=False)


def add_identity(a: CsrMatrix) -> CsrMatrix:
    """A + I for square A."""
    if a.n_rows != a.n_cols:
        raise ShapeError(f"add_identity needs a square matrix, got {a.shape}")
    return CombinePlan([a, CsrMatrix.identity(a.n_rows)]).combine([1.0, 1.0])


def masked_row_dots(x: CsrMatrix, y: CsrMatrix, mask: CsrMatrix) -> np.ndarray:
    """(X @ Y^T) evaluated only on mask's pattern; aligned with mask.values."""
    if x.n_cols != y.n_cols or mask.shape != (x.n_rows, y.n_rows):
        raise ShapeError(f"masked_row_dots: X{x.shape} Y{y.shape} mask{mask.shape}")
    return _backend.kernels.masked_row_dots(
        x.row_offsets, x.col_indices, x.values,
        y.row_offsets, y.col_indices, y.values,
        mask.row_offsets, mask.col_indices, x.n_cols)


def sampled_dense_dots(mask: CsrMatrix, g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(G @ X^T) evaluated only on mask's pattern; aligned with mask.values."""
    g = np.ascontiguousarray(g, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if g.shape[0] != mask.n_rows or x.shape[0] != mask.n_cols or g.shape[1] != x.shape[1]:
        raise ShapeError(f"sampled_dense_dots: mask{mask.shape} G{g.shape} X{x.shape}")
    return _backend.kernels.sampled_dense_dots(mask.row_offsets, mask.col_indices, g, x)
