"""Graph label diffusion: solve (I - alpha*W) Z = Y column by column with
conjugate gradient, then read pseudo labels off the image rows.

The label matrix Y is built internally: node i < m is the text anchor of
class i and carries Y[i, i] = 1; image nodes start at row m and carry zeros.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .affinity import SparseMatrix, build_topk_affinity, normalize_symmetric
from .containers import EmbeddingSet
from .errors import SolverError, ValidationError

CG_TOL_DEFAULT = 1e-6
CG_MAX_ITER_DEFAULT = 200
CONFIDENCE_EPS = 1e-12
PROPAGATION_CLASS_LIMIT = 500  # above this, skip diffusion and trust the model


class LabelSource(enum.Enum):
    TEXT_BRANCH = "text_branch"
    VISUAL_BRANCH = "visual_branch"
    AGREED = "agreed"
    MODEL_PREDICTION = "model_prediction"


@dataclass
class DiffusionResult:
    scores: np.ndarray  # (m+n) x m
    cg_iterations: np.ndarray  # per class column
    residuals: np.ndarray  # final relative residual per column


@dataclass
class PseudoLabelSet:
    labels: np.ndarray
    confidence: np.ndarray
    source: LabelSource
    agreement_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        self.confidence = np.ascontiguousarray(self.confidence, dtype=np.float64)
        if self.labels.size != self.confidence.size:
            raise ValidationError("labels and confidence length mismatch")
        if self.agreement_mask is not None:
            self.agreement_mask = np.ascontiguousarray(self.agreement_mask, dtype=bool)
            if self.agreement_mask.size != self.labels.size:
                raise ValidationError("agreement mask length mismatch")

    def __len__(self) -> int:
        return self.labels.size


def propagate(
    W: SparseMatrix,
    m: int,
    alpha: float,
    cg_tol: float = CG_TOL_DEFAULT,
    cg_max_iter: int = CG_MAX_ITER_DEFAULT,
    threads: int = 1,
    debug_dump=None,
) -> DiffusionResult:
    """Diffuse the m text anchors over the graph: Z = (I - alpha*W)^{-1} Y.

    One CG solve per class column; raises SolverError (carrying the worst
    residual) if any column misses cg_tol within cg_max_iter iterations.
    Columns are independent, so results are bit-stable for a fixed thread
    count; across thread counts any drift stays within 2*cg_tol.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValidationError(f"alpha must be in [0, 1), got {alpha}")
    if not 1 <= m <= W.size:
        raise ValidationError(f"labeled count m={m} out of range for {W.size} nodes")
    if not W.symmetric:
        raise ValidationError("propagate requires the symmetric normalized adjacency")
    N = W.size
    scores = np.zeros((N, m))
    iterations = np.zeros(m, dtype=np.int64)
    residuals = np.zeros(m)

    if alpha == 0.0:
        scores[:m, :m] = np.eye(m)
    else:

        def solve(i):
            b = np.zeros(N)
            b[i] = 1.0
            return _kernels.cg_diffusion_column(
                W.row_offsets, W.col_indices, W.values, alpha, b, cg_tol, cg_max_iter
            )

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(solve, range(m)))
        else:
            results = [solve(i) for i in range(m)]
        for i, (x, it, rel) in enumerate(results):
            scores[:, i] = x
            iterations[i] = it
            residuals[i] = rel
        worst = float(residuals.max())
        if worst > cg_tol:
            raise SolverError(
                f"CG did not reach tol={cg_tol} within {cg_max_iter} iterations "
                f"(worst residual {worst:.3e})",
                worst_residual=worst,
            )
    if np.any(~np.isfinite(scores)):
        raise SolverError("diffusion produced non-finite scores")

    if debug_dump is not None:
        n_img = N - m
        with open(debug_dump, "w") as fh:
            for j in range(min(10, n_img)):
                row = " ".join(repr(v) for v in scores[m + j])
                fh.write(f"{j} {row}\n")
    return DiffusionResult(scores, iterations, residuals)


def extract_pseudo_labels(
    Z: DiffusionResult, m: int, source: LabelSource = LabelSource.TEXT_BRANCH
) -> PseudoLabelSet:
    """Label image j by the argmax class of score row m+j (ties to the lowest
    class index); confidence is the winning share of the row sum, in [0, 1]."""
    if Z.scores.shape[0] < m + 1:
        raise ValidationError("diffusion scores carry no image rows")
    if Z.scores.shape[1] != m:
        raise ValidationError("diffusion scores column count differs from m")
    image_rows = Z.scores[m:]
    labels = np.argmax(image_rows, axis=1)
    winning = image_rows[np.arange(image_rows.shape[0]), labels]
    confidence = np.clip(winning / (image_rows.sum(axis=1) + CONFIDENCE_EPS), 0.0, 1.0)
    return PseudoLabelSet(labels, confidence, source)


def nearest_text_labels(
    V: EmbeddingSet, T: EmbeddingSet, logit_scale: float = 100.0
) -> PseudoLabelSet:
    """Zero-shot fallback: nearest-text argmax with softmax confidence."""
    logits = logit_scale * (V.data @ T.data.T)
    labels = np.argmax(logits, axis=1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    confidence = probs[np.arange(V.rows), labels]
    return PseudoLabelSet(labels, confidence, LabelSource.MODEL_PREDICTION)


def propagate_union(
    T_hat: EmbeddingSet,
    V_hat: EmbeddingSet,
    alpha: float,
    k: int,
    cg_tol: float = CG_TOL_DEFAULT,
    cg_max_iter: int = CG_MAX_ITER_DEFAULT,
    gamma: float = 1.0,
    threads: int = 1,
    source: LabelSource = LabelSource.TEXT_BRANCH,
    logit_scale: float = 100.0,
    debug_dump=None,
) -> PseudoLabelSet:
    """Full pipeline over the [text; visual] union.

    Applies the documented fallbacks: more classes than
    PROPAGATION_CLASS_LIMIT, or alpha == 0 (no diffusion), fall back to
    nearest-text model predictions.
    """
    m, n = T_hat.rows, V_hat.rows
    if T_hat.dims != V_hat.dims:
        raise ValidationError("text and visual dims differ")
    if m > PROPAGATION_CLASS_LIMIT or alpha == 0.0:
        return nearest_text_labels(V_hat, T_hat, logit_scale)
    union = EmbeddingSet(
        np.vstack([T_hat.data, V_hat.data]),
        tuple(f"t:{i}" for i in T_hat.ids) + tuple(f"v:{i}" for i in V_hat.ids),
        unit_norm=True,
    )
    k_eff = min(k, m + n - 1)
    A = build_topk_affinity(union, k_eff, gamma=gamma)
    W = normalize_symmetric(A)
    Z = propagate(
        W, m, alpha, cg_tol, cg_max_iter, threads=threads, debug_dump=debug_dump
    )
    return extract_pseudo_labels(Z, m, source=source)


def knn_pseudo_labels(
    V: EmbeddingSet, T: EmbeddingSet, k: Optional[int] = None
) -> PseudoLabelSet:
    """k-NN baseline: majority of nearest-text votes within each image's
    k nearest image neighbors (self excluded); ties to the lowest class."""
    n, m = V.rows, T.rows
    if V.dims != T.dims:
        raise ValidationError("text and visual dims differ")
    if k is None:
        k = max(1, round(n / m))
    if not 1 <= k < n:
        raise ValidationError(f"k must satisfy 1 <= k < n={n}, got {k}")
    votes = np.argmax(V.data @ T.data.T, axis=1)
    sims = V.data @ V.data.T
    np.fill_diagonal(sims, -np.inf)
    idx, _ = _kernels.topk_rows(sims, k)
    labels = np.empty(n, dtype=np.int64)
    confidence = np.empty(n)
    for j in range(n):
        counts = np.bincount(votes[idx[j]], minlength=m)
        labels[j] = int(np.argmax(counts))
        confidence[j] = counts[labels[j]] / k
    return PseudoLabelSet(labels, confidence, LabelSource.MODEL_PREDICTION)
