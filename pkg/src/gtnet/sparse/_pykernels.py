"""Vectorized numpy versions of the compiled CSR kernels.

Same signatures and output layout as ``_ckernels``. Used when the extension
is not built, or when ``GTNET_PURE_PYTHON=1`` is set.
"""

from __future__ import annotations

import numpy as np


def _row_ids(ptr: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(ptr) - 1, dtype=np.int64), np.diff(ptr))


def _reduce_by_key(keys: np.ndarray, vals: np.ndarray):
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    vals = vals[order]
    if len(keys) == 0:
        return keys, vals
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    return keys[starts], np.add.reduceat(vals, starts)


def _from_keys(keys: np.ndarray, vals: np.ndarray, n_rows: int, n_cols: int):
    rows = keys // n_cols if n_cols else keys
    cols = keys - rows * n_cols
    ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=ptr[1:])
    return ptr, cols.astype(np.int64), vals.astype(np.float64)


def spgemm(a_ptr, a_idx, a_val, b_ptr, b_idx, b_val, n_cols):
    n_rows = len(a_ptr) - 1
    a_rows = _row_ids(a_ptr)
    starts = b_ptr[a_idx]
    counts = b_ptr[a_idx + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.zeros(n_rows + 1, dtype=np.int64), np.empty(0, np.int64), np.empty(0)
    # position of each expanded term inside b's arrays
    seg_start = np.repeat(np.cumsum(counts) - counts, counts)
    pos = np.repeat(starts, counts) + (np.arange(total, dtype=np.int64) - seg_start)
    rows = np.repeat(a_rows, counts)
    keys = rows * n_cols + b_idx[pos]
    vals = np.repeat(a_val, counts) * b_val[pos]
    keys, vals = _reduce_by_key(keys, vals)
    return _from_keys(keys, vals, n_rows, n_cols)


def spmm_dense(ptr, idx, val, x):
    n_rows = len(ptr) - 1
    out = np.zeros((n_rows, x.shape[1]), dtype=np.float64)
    if len(idx) == 0:
        return out
    contrib = val[:, None] * x[idx]
    nonempty = np.flatnonzero(np.diff(ptr) > 0)
    out[nonempty] = np.add.reduceat(contrib, ptr[nonempty], axis=0)
    return out


def masked_row_dots(x_ptr, x_idx, x_val, y_ptr, y_idx, y_val, m_ptr, m_idx, n_inner):
    n_rows = len(m_ptr) - 1
    n_y_rows = len(y_ptr) - 1
    yt_ptr, yt_idx, yt_val = transpose(y_ptr, y_idx, y_val, n_inner)
    z_ptr, z_idx, z_val = spgemm(x_ptr, x_idx, x_val, yt_ptr, yt_idx, yt_val, n_y_rows)
    z_keys = _row_ids(z_ptr) * n_y_rows + z_idx
    m_keys = _row_ids(m_ptr)[: len(m_idx)] * n_y_rows + m_idx
    out = np.zeros(len(m_idx), dtype=np.float64)
    if len(z_keys) == 0 or len(m_keys) == 0:
        return out
    loc = np.searchsorted(z_keys, m_keys)
    loc_c = np.minimum(loc, len(z_keys) - 1)
    hit = z_keys[loc_c] == m_keys
    out[hit] = z_val[loc_c[hit]]
    return out


def sampled_dense_dots(ptr, idx, g, x):
    rows = _row_ids(ptr)
    return np.einsum("ij,ij->i", g[rows], x[idx])


def transpose(ptr, idx, val, n_cols):
    rows = _row_ids(ptr)
    order = np.argsort(idx, kind="stable")
    t_ptr = np.zeros(n_cols + 1, dtype=np.int64)
    np.cumsum(np.bincount(idx, minlength=n_cols), out=t_ptr[1:])
    return t_ptr, rows[order].astype(np.int64), val[order].astype(np.float64)
