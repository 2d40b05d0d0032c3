"""Sparse top-k cosine affinity over the text+visual union and its
symmetric degree normalization W = D^(-1/2) (A + A^T) D^(-1/2)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .containers import EmbeddingSet
from .errors import ValidationError

DEGREE_FLOOR = 1e-12
SYMMETRY_TOL = 1e-12


@dataclass
class SparseMatrix:
    """Square CSR matrix; values are nonnegative and the diagonal is empty."""

    size: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        self.row_offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.row_offsets.size != self.size + 1:
            raise ValidationError("row_offsets length must be size + 1")
        if self.col_indices.size != self.values.size:
            raise ValidationError("col_indices and values length mismatch")

    @property
    def nnz(self) -> int:
        return self.values.size

    def row_ids(self) -> np.ndarray:
        return np.repeat(
            np.arange(self.size, dtype=np.int64), np.diff(self.row_offsets)
        )

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return _kernels.csr_matvec(
            self.row_offsets, self.col_indices, self.values, np.asarray(x, np.float64)
        )

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.size, self.size))
        out[self.row_ids(), self.col_indices] = self.values
        return out

    def validate(self) -> None:
        if np.any(self.row_ids() == self.col_indices):
            raise ValidationError("sparse matrix has a self-loop entry")
        if self.values.size and float(self.values.min()) < 0.0:
            raise ValidationError("sparse matrix has a negative value")
        if self.symmetric:
            d = self.to_dense()
            if float(np.abs(d - d.T).max()) > SYMMETRY_TOL:
                raise ValidationError("symmetric flag set on an asymmetric matrix")

    def dump_edges(self, path) -> None:
        """Debug dump as a (row, col, value) text edge list."""
        rows = self.row_ids()
        with open(path, "w") as fh:
            for r, c, v in zip(rows, self.col_indices, self.values):
                fh.write(f"{r} {c} {v!r}\n")


_BLOCK_TARGET = 1 << 23  # ~8M f64 scores per similarity block


def build_topk_affinity(L: EmbeddingSet, k: int, gamma: float = 1.0) -> SparseMatrix:
    """Keep each row's k largest cosine similarities to the other rows.

    Self-similarity is excluded. Ties at the k-th value break toward the
    lower column index. Negative similarities are clamped to zero after
    selection (then raised to gamma), so rows may keep structural zeros.
    """
    n = L.rows
    if not 1 <= k < n:
        raise ValidationError(f"k must satisfy 1 <= k < {n}, got {k}")
    if gamma <= 0:
        raise ValidationError("gamma must be positive")
    data = L.data
    block = max(1, min(n, _BLOCK_TARGET // n))
    idx_parts = []
    val_parts = []
    for start in range(0, n, block):
        stop = min(start + block, n)
        sims = data[start:stop] @ data.T
        sims[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        idx, vals = _kernels.topk_rows(sims, k)
        idx_parts.append(idx)
        val_parts.append(vals)
    col_indices = np.concatenate(idx_parts).reshape(-1)
    values = np.concatenate(val_parts).reshape(-1)
    np.maximum(values, 0.0, out=values)
    if gamma != 1.0:
        values **= gamma
    row_offsets = np.arange(0, (n + 1) * k, k, dtype=np.int64)
    return SparseMatrix(n, row_offsets, col_indices, values, symmetric=False)


def normalize_symmetric(A: SparseMatrix) -> SparseMatrix:
    """Return D^(-1/2) (A + A^T) D^(-1/2) with D the degree of A + A^T.

    Zero-degree nodes get the 1e-12 degree floor, which leaves their rows
    all-zero instead of NaN.
    """
    A.validate()
    n = A.size
    rows = np.concatenate([A.row_ids(), A.col_indices])
    cols = np.concatenate([A.col_indices, A.row_ids()])
    vals = np.concatenate([A.values, A.values])

    # coalesce duplicate coordinates of A + A^T
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if rows.size:
        keys = rows * n + cols
        first = np.empty(rows.size, dtype=bool)
        first[0] = True
        np.not_equal(keys[1:], keys[:-1], out=first[1:])
        starts = np.flatnonzero(first)
        summed = np.add.reduceat(vals, starts)
        rows, cols, vals = rows[starts], cols[starts], summed
    degrees = np.bincount(rows, weights=vals, minlength=n)
    inv_sqrt = 1.0 / np.sqrt(np.maximum(degrees, DEGREE_FLOOR))
    # pairwise products keep (i,j) and (j,i) bitwise equal
    vals = vals * (inv_sqrt[rows] * inv_sqrt[cols])

    row_offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=row_offsets[1:])
    return SparseMatrix(n, row_offsets, cols, vals, symmetric=True)
