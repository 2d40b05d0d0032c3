"""Text-span SVD bases (P0/P1/P2), projection with renormalization, and
visual-text alignment statistics.

Orientation convention: the matrix under SVD has the text embeddings as
columns, so the basis columns are left singular directions living in the
d-dimensional embedding space and P = B B^T acts on embedding rows.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .containers import EmbeddingSet, LabelVector, UNLABELED, l2_normalize
from .errors import (
    DegenerateProjectionError,
    DegenerateSpanError,
    ValidationError,
)

RANK_TRUNCATION = 1e-7  # singular values below this fraction of sigma_max are noise
ORTHONORMALITY_TOL = 1e-6
PROJECTED_ZERO_EPS = 1e-10


class Variant(enum.IntEnum):
    P0 = 0  # identity: no projection, normalization only
    P1 = 1  # full text span
    P2 = 2  # text span minus its principal direction


@dataclass
class ProjectionBasis:
    basis: np.ndarray  # d x r, orthonormal columns (empty for P0)
    variant: Variant
    source_dims: int
    source_classes: int
    rank: int

    def __post_init__(self):
        self.basis = np.ascontiguousarray(self.basis, dtype=np.float64)
        self.variant = Variant(self.variant)
        if self.basis.size:
            gram = self.basis.T @ self.basis
            err = float(np.abs(gram - np.eye(self.basis.shape[1])).max())
            if err > ORTHONORMALITY_TOL:
                raise ValidationError(
                    f"basis columns not orthonormal (max deviation {err:.2e})"
                )


@dataclass
class AlignmentStats:
    mean_text_text_cos: float
    mean_intra_class_visual_text_cos: float
    mean_inter_class_visual_text_cos: float

    def as_dict(self) -> dict:
        return {
            "mean_text_text_cos": self.mean_text_text_cos,
            "mean_intra_class_visual_text_cos": self.mean_intra_class_visual_text_cos,
            "mean_inter_class_visual_text_cos": self.mean_inter_class_visual_text_cos,
        }


def _require_unit_rows(x: EmbeddingSet, what: str) -> None:
    norms = np.linalg.norm(x.data, axis=1)
    if float(np.abs(norms - 1.0).max()) > 1e-4:
        raise ValidationError(f"{what} rows must be unit-normalized")


def compute_text_basis(T: EmbeddingSet, variant: Variant) -> ProjectionBasis:
    """SVD basis of the text-embedding span, ordered by descending singular
    value; P2 drops the leading (principal) direction."""
    variant = Variant(variant)
    m, d = T.rows, T.dims
    if m < 2:
        raise ValidationError("need at least two text embeddings")
    _require_unit_rows(T, "text embedding")
    if variant is Variant.P0:
        return ProjectionBasis(np.zeros((d, 0)), Variant.P0, d, m, rank=d)

    # columns = text embeddings
    U, S, _ = np.linalg.svd(T.data.T, full_matrices=False)
    r = int(np.count_nonzero(S > RANK_TRUNCATION * S[0]))
    if variant is Variant.P2 and r < 2:
        raise DegenerateSpanError(
            f"text span has numerical rank {r}; P2 needs rank >= 2"
        )
    cols = U[:, :r] if variant is Variant.P1 else U[:, 1:r]
    return ProjectionBasis(
        basis=np.ascontiguousarray(cols),
        variant=variant,
        source_dims=d,
        source_classes=m,
        rank=cols.shape[1],
    )


def project(basis: ProjectionBasis, X: EmbeddingSet) -> EmbeddingSet:
    """Map each row onto the basis span and renormalize to unit length."""
    if X.dims != basis.source_dims:
        raise ValidationError(
            f"dims mismatch: rows have {X.dims}, basis expects {basis.source_dims}"
        )
    if basis.variant is Variant.P0:
        return l2_normalize(X)
    projected = (X.data @ basis.basis) @ basis.basis.T
    norms = np.linalg.norm(projected, axis=1)
    bad = np.flatnonzero(norms <= PROJECTED_ZERO_EPS)
    if bad.size:
        raise DegenerateProjectionError(
            f"row entirely outside projection span (id={X.ids[bad[0]]!r})"
        )
    return EmbeddingSet(projected / norms[:, None], X.ids, unit_norm=True)


def alignment_stats(
    V: EmbeddingSet, T: EmbeddingSet, labels: LabelVector
) -> AlignmentStats:
    """Mean text-text cosine (i != j), and mean visual-text cosine split
    into own-class and other-class pairs. Unlabeled rows are excluded."""
    _require_unit_rows(V, "visual")
    _require_unit_rows(T, "text")
    if V.dims != T.dims:
        raise ValidationError("visual and text dims differ")
    if T.rows < 2:
        raise ValidationError("need at least two text embeddings")
    if len(labels) != V.rows:
        raise ValidationError("labels length must match the visual row count")
    labels.check_against(T.rows)
    m = T.rows

    tt = T.data @ T.data.T
    text_text = float((tt.sum() - np.trace(tt)) / (m * (m - 1)))

    lab = labels.values
    keep = lab != UNLABELED
    if not np.any(keep):
        raise ValidationError("all labels are UNLABELED")
    vt = V.data[keep] @ T.data.T
    lab = lab[keep]
    own = vt[np.arange(vt.shape[0]), lab]
    intra = float(own.mean())
    inter = float((vt.sum() - own.sum()) / (vt.shape[0] * (m - 1)))
    return AlignmentStats(text_text, intra, inter)
