"""Pure-numpy kernel implementations, used when the compiled core is absent.

All functions here must match the compiled backend's deterministic contracts:
top-k selection keeps every entry strictly above the k-th value plus the
lowest-index ties at it, and CG runs plain unpreconditioned iterations with a
zero initial guess.
"""

from __future__ import annotations

import numpy as np


def topk_rows(block: np.ndarray, k: int):
    """Per-row deterministic top-k of a dense score block.

    Entries equal to -inf are never selected unless fewer than k finite
    entries exist. Returns (indices, values), each (rows, k), with the kept
    entries sorted by ascending column index.
    """
    b, n = block.shape
    idx = np.empty((b, k), dtype=np.int64)
    vals = np.empty((b, k), dtype=np.float64)
    for r in range(b):
        row = block[r]
        kth = np.partition(row, n - k)[n - k]
        greater = np.flatnonzero(row > kth)
        need = k - greater.size
        ties = np.flatnonzero(row == kth)[:need]
        keep = np.sort(np.concatenate([greater, ties]))
        idx[r] = keep
        vals[r] = row[keep]
    return idx, vals


def csr_matvec(
    row_offsets: np.ndarray,
    col_indices: np.ndarray,
    values: np.ndarray,
    x: np.ndarray,
) -> np.ndarray:
    n = row_offsets.size - 1
    counts = np.diff(row_offsets)
    row_ids = np.repeat(np.arange(n, dtype=np.int64), counts)
    return np.bincount(row_ids, weights=values * x[col_indices], minlength=n)


def cg_diffusion_column(
    row_offsets: np.ndarray,
    col_indices: np.ndarray,
    values: np.ndarray,
    alpha: float,
    b: np.ndarray,
    tol: float,
    max_iter: int,
):
    """Solve (I - alpha*W) x = b by conjugate gradient, zero initial guess.

    Returns (x, iterations, relative_residual).
    """

    def matvec(v):
        return v - alpha * csr_matvec(row_offsets, col_indices, values, v)

    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    rel = np.sqrt(rs) / b_norm
    it = 0
    while rel > tol and it < max_iter:
        ap = matvec(p)
        denom = float(p @ ap)
        if denom <= 0.0:
            # loss of positive definiteness to rounding; bail with current x
            break
        step = rs / denom
        x += step * p
        r -= step * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        rel = np.sqrt(rs) / b_norm
        it += 1
    return x, it, float(rel)
