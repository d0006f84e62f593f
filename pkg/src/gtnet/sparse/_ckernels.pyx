# cython: language_level=3
"""Compiled CSR kernels.

Every function here has a numpy twin in ``_pykernels`` with the same
signature and bit-compatible output ordering; ``_backend`` picks one at
import time.  All index arrays are int64, all values float64, all inputs
assumed canonical (sorted, duplicate-free columns within each row).
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t
from libc.stdlib cimport qsort

cnp.import_array()


cdef int _cmp_int64(const void* a, const void* b) noexcept nogil:
    cdef int64_t x = (<const int64_t*>a)[0]
    cdef int64_t y = (<const int64_t*>b)[0]
    return (x > y) - (x < y)


def spgemm(const int64_t[::1] a_ptr, const int64_t[::1] a_idx, const double[::1] a_val,
           const int64_t[::1] b_ptr, const int64_t[::1] b_idx, const double[::1] b_val,
           Py_ssize_t n_cols):
    """Gustavson row-by-row product with a dense accumulator.

    Returns the symbolic pattern: entries that cancel to 0.0 are kept.
    """
    cdef Py_ssize_t n_rows = a_ptr.shape[0] - 1
    cdef Py_ssize_t i, p, q, k, j, start, nnz = 0
    cdef int64_t[::1] mark = np.full(n_cols, -1, dtype=np.int64)

    # symbolic pass: exact output size
    cdef int64_t[::1] c_ptr = np.zeros(n_rows + 1, dtype=np.int64)
    with nogil:
        for i in range(n_rows):
            for p in range(a_ptr[i], a_ptr[i + 1]):
                k = a_idx[p]
                for q in range(b_ptr[k], b_ptr[k + 1]):
                    j = b_idx[q]
                    if mark[j] != i:
                        mark[j] = i
                        nnz += 1
            c_ptr[i + 1] = nnz

    c_idx_arr = np.empty(nnz, dtype=np.int64)
    c_val_arr = np.empty(nnz, dtype=np.float64)
    cdef int64_t[::1] c_idx = c_idx_arr
    cdef double[::1] c_val = c_val_arr
    cdef double[::1] acc = np.zeros(n_cols, dtype=np.float64)
    cdef double av
    mark[:] = -1

    with nogil:
        for i in range(n_rows):
            start = c_ptr[i]
            nnz = start
            for p in range(a_ptr[i], a_ptr[i + 1]):
                k = a_idx[p]
                av = a_val[p]
                for q in range(b_ptr[k], b_ptr[k + 1]):
                    j = b_idx[q]
                    if mark[j] != i:
                        mark[j] = i
                        acc[j] = av * b_val[q]
                        c_idx[nnz] = j
                        nnz += 1
                    else:
                        acc[j] += av * b_val[q]
            if nnz - start > 1:
                qsort(&c_idx[start], nnz - start, sizeof(int64_t), _cmp_int64)
            for p in range(start, nnz):
                c_val[p] = acc[c_idx[p]]

    return np.asarray(c_ptr), c_idx_arr, c_val_arr


def spmm_dense(const int64_t[::1] ptr, const int64_t[::1] idx, const double[::1] val,
               const double[:, ::1] x):
    cdef Py_ssize_t n_rows = ptr.shape[0] - 1
    cdef Py_ssize_t width = x.shape[1]
    cdef Py_ssize_t i, p, k, c
    cdef double v
    out_arr = np.zeros((n_rows, width), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n_rows):
            for p in range(ptr[i], ptr[i + 1]):
                k = idx[p]
                v = val[p]
                for c in range(width):
                    out[i, c] += v * x[k, c]
    return out_arr


def masked_row_dots(const int64_t[::1] x_ptr, const int64_t[::1] x_idx, const double[::1] x_val,
                    const int64_t[::1] y_ptr, const int64_t[::1] y_idx, const double[::1] y_val,
                    const int64_t[::1] m_ptr, const int64_t[::1] m_idx, Py_ssize_t n_inner):
    """For each mask entry (i, k): sum_j X[i, j] * Y[k, j].

    Equivalent to (X @ Y.T) sampled on the mask pattern.
    """
    cdef Py_ssize_t n_rows = m_ptr.shape[0] - 1
    cdef Py_ssize_t i, p, q, k
    cdef double s
    out_arr = np.zeros(m_idx.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] acc = np.zeros(n_inner, dtype=np.float64)
    cdef int64_t[::1] mark = np.full(n_inner, -1, dtype=np.int64)
    with nogil:
        for i in range(n_rows):
            if m_ptr[i] == m_ptr[i + 1] or x_ptr[i] == x_ptr[i + 1]:
                continue
            for p in range(x_ptr[i], x_ptr[i + 1]):
                mark[x_idx[p]] = i
                acc[x_idx[p]] = x_val[p]
            for p in range(m_ptr[i], m_ptr[i + 1]):
                k = m_idx[p]
                s = 0.0
                for q in range(y_ptr[k], y_ptr[k + 1]):
                    if mark[y_idx[q]] == i:
                        s += acc[y_idx[q]] * y_val[q]
                out[p] = s
    return out_arr


def sampled_dense_dots(const int64_t[::1] ptr, const int64_t[::1] idx,
                       const double[:, ::1] g, const double[:, ::1] x):
    """For each stored (i, k): dot(G[i, :], X[k, :])."""
    cdef Py_ssize_t n_rows = ptr.shape[0] - 1
    cdef Py_ssize_t width = g.shape[1]
    cdef Py_ssize_t i, p, k, c
    cdef double s
    out_arr = np.empty(idx.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n_rows):
            for p in range(ptr[i], ptr[i + 1]):
                k = idx[p]
                s = 0.0
                for c in range(width):
                    s += g[i, c] * x[k, c]
                out[p] = s
    return out_arr


def transpose(const int64_t[::1] ptr, const int64_t[::1] idx, const double[::1] val,
              Py_ssize_t n_cols):
    """Counting-sort transpose; output rows come out column-sorted for free."""
    cdef Py_ssize_t n_rows = ptr.shape[0] - 1
    cdef Py_ssize_t nnz = idx.shape[0]
    cdef Py_ssize_t i, p, j, dest
    t_ptr_arr = np.zeros(n_cols + 1, dtype=np.int64)
    t_idx_arr = np.empty(nnz, dtype=np.int64)
    t_val_arr = np.empty(nnz, dtype=np.float64)
    cdef int64_t[::1] t_ptr = t_ptr_arr
    cdef int64_t[::1] t_idx = t_idx_arr
    cdef double[::1] t_val = t_val_arr
    cdef int64_t[::1] fill = np.empty(n_cols, dtype=np.int64)
    with nogil:
        for p in range(nnz):
            t_ptr[idx[p] + 1] += 1
        for j in range(n_cols):
            t_ptr[j + 1] += t_ptr[j]
        for j in range(n_cols):
            fill[j] = t_ptr[j]
        for i in range(n_rows):
            for p in range(ptr[i], ptr[i + 1]):
                j = idx[p]
                dest = fill[j]
                t_idx[dest] = i
                t_val[dest] = val[p]
                fill[j] += 1
    return t_ptr_arr, t_idx_arr, t_val_arr
