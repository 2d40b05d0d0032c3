# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: deterministic per-row top-k selection, CSR matvec, and
the conjugate-gradient diffusion solve. Contracts match py_backend exactly.
"""

import numpy as np

cimport cython
from libc.math cimport sqrt


cdef inline bint _weaker(double av, long ai, double bv, long bi) nogil:
    # strength order: higher value wins, then lower index
    if av != bv:
        return av < bv
    return ai > bi


cdef void _row_topk(const double[:] row, long n, long k,
                    double[:] hv, long[:] hi) nogil:
    """Min-heap of the k strongest entries; hv/hi are scratch of size k."""
    cdef long i, j, child, parent
    cdef double tv
    cdef long ti
    for i in range(k):
        hv[i] = row[i]
        hi[i] = i
    # heapify (weakest at the root)
    for i in range(k // 2 - 1, -1, -1):
        parent = i
        while True:
            child = 2 * parent + 1
            if child >= k:
                break
            if child + 1 < k and _weaker(hv[child + 1], hi[child + 1],
                                         hv[child], hi[child]):
                child += 1
            if _weaker(hv[child], hi[child], hv[parent], hi[parent]):
                tv = hv[parent]; ti = hi[parent]
                hv[parent] = hv[child]; hi[parent] = hi[child]
                hv[child] = tv; hi[child] = ti
                parent = child
            else:
                break
    for i in range(k, n):
        if _weaker(hv[0], hi[0], row[i], i):
            hv[0] = row[i]
            hi[0] = i
            parent = 0
            while True:
                child = 2 * parent + 1
                if child >= k:
                    break
                if child + 1 < k and _weaker(hv[child + 1], hi[child + 1],
                                             hv[child], hi[child]):
                    child += 1
                if _weaker(hv[child], hi[child], hv[parent], hi[parent]):
                    tv = hv[parent]; ti = hi[parent]
                    hv[parent] = hv[child]; hi[parent] = hi[child]
                    hv[child] = tv; hi[child] = ti
                    parent = child
                else:
                    break
    # insertion sort by ascending column index
    for i in range(1, k):
        tv = hv[i]; ti = hi[i]
        j = i - 1
        while j >= 0 and hi[j] > ti:
            hv[j + 1] = hv[j]; hi[j + 1] = hi[j]
            j -= 1
        hv[j + 1] = tv; hi[j + 1] = ti


def topk_rows(double[:, ::1] block, long k):
    cdef long b = block.shape[0]
    cdef long n = block.shape[1]
    idx_arr = np.empty((b, k), dtype=np.int64)
    val_arr = np.empty((b, k), dtype=np.float64)
    cdef long[:, ::1] idx = idx_arr
    cdef double[:, ::1] vals = val_arr
    cdef long r
    with nogil:
        for r in range(b):
            _row_topk(block[r], n, k, vals[r], idx[r])
    return idx_arr, val_arr


cdef void _matvec_shifted(const long[:] offsets, const long[:] indices,
                          const double[:] values, double alpha,
                          const double[:] x, double[:] out) nogil:
    """out = x - alpha * W @ x for CSR W."""
    cdef long i, p
    cdef double acc
    cdef long n = offsets.shape[0] - 1
    for i in range(n):
        acc = 0.0
        for p in range(offsets[i], offsets[i + 1]):
            acc += values[p] * x[indices[p]]
        out[i] = x[i] - alpha * acc


def csr_matvec(long[::1] row_offsets, long[::1] col_indices,
               double[::1] values, double[::1] x):
    cdef long n = row_offsets.shape[0] - 1
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef long i, p
    cdef double acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for p in range(row_offsets[i], row_offsets[i + 1]):
                acc += values[p] * x[col_indices[p]]
            out[i] = acc
    return out_arr


def cg_diffusion_column(long[::1] row_offsets, long[::1] col_indices,
                        double[::1] values, double alpha,
                        double[::1] b, double tol, long max_iter):
    cdef long n = row_offsets.shape[0] - 1
    x_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] x = x_arr
    cdef double[::1] r = np.empty(n, dtype=np.float64)
    cdef double[::1] p = np.empty(n, dtype=np.float64)
    cdef double[::1] ap = np.empty(n, dtype=np.float64)
    cdef double b_norm = 0.0, rs = 0.0, rs_new, denom, step, rel
    cdef long i, it = 0

    with nogil:
        for i in range(n):
            b_norm += b[i] * b[i]
    if b_norm == 0.0:
        return x_arr, 0, 0.0
    b_norm = sqrt(b_norm)

    with nogil:
        for i in range(n):
            r[i] = b[i]
            p[i] = b[i]
            rs += r[i] * r[i]
    rel = sqrt(rs) / b_norm

    while rel > tol and it < max_iter:
        with nogil:
            _matvec_shifted(row_offsets, col_indices, values, alpha, p, ap)
            denom = 0.0
            for i in range(n):
                denom += p[i] * ap[i]
        if denom <= 0.0:
            break
        with nogil:
            step = rs / denom
            rs_new = 0.0
            for i in range(n):
                x[i] += step * p[i]
                r[i] -= step * ap[i]
                rs_new += r[i] * r[i]
            for i in range(n):
                p[i] = r[i] + (rs_new / rs) * p[i]
            rs = rs_new
        rel = sqrt(rs) / b_norm
        it += 1
    return x_arr, it, rel
