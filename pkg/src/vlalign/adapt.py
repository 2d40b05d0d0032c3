"""Per-dimension affine adapters over embedding space, cosine logits,
cross-entropy with exact gradients, class centers, and SGD with momentum.

The adapter is the trainable stand-in for encoder normalization weights:
row_out = l2_normalize(row * gain + bias). Gradients are derived for exactly
this graph; the renormalization Jacobian is (I - y y^T) / ||u|| applied to
the upstream gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .containers import EmbeddingSet, ZERO_ROW_EPS
from .errors import DegenerateInputError, ValidationError
from .labelprop import PseudoLabelSet

GAIN_FLOOR = 1e-6
DEFAULT_LOGIT_SCALE = 100.0


@dataclass
class AffineAdapter:
    gain: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.gain = np.ascontiguousarray(self.gain, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.gain.shape != self.bias.shape or self.gain.ndim != 1:
            raise ValidationError("gain and bias must be 1-D vectors of equal size")
        if not (np.all(np.isfinite(self.gain)) and np.all(np.isfinite(self.bias))):
            raise ValidationError("adapter parameters contain NaN or Inf")

    @classmethod
    def identity(cls, dims: int) -> "AffineAdapter":
        return cls(np.ones(dims), np.zeros(dims))

    @property
    def dims(self) -> int:
        return self.gain.size

    def clamp_gain(self) -> None:
        """Keep every gain entry at magnitude >= GAIN_FLOOR (sign preserved)."""
        signs = np.where(self.gain < 0.0, -1.0, 1.0)
        np.maximum(np.abs(self.gain), GAIN_FLOOR, out=self.gain)
        self.gain *= signs


@dataclass
class OptimizerState:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    momentum_buffers: list = field(default_factory=list)
    step_count: int = 0


@dataclass
class ClassCenters:
    centers: np.ndarray  # m x d, unit rows
    counts: np.ndarray  # occupancy per class


def adapter_forward(a: AffineAdapter, X: EmbeddingSet) -> EmbeddingSet:
    """row_out = l2_normalize(row * gain + bias)."""
    if X.dims != a.dims:
        raise ValidationError(f"adapter dims {a.dims} != embedding dims {X.dims}")
    pre = X.data * a.gain + a.bias
    norms = np.linalg.norm(pre, axis=1)
    bad = np.flatnonzero(norms <= ZERO_ROW_EPS)
    if bad.size:
        raise DegenerateInputError(
            f"affine map produced a zero row (id={X.ids[bad[0]]!r})"
        )
    return EmbeddingSet(pre / norms[:, None], X.ids, unit_norm=True)


def cosine_logits(V: EmbeddingSet, C: EmbeddingSet, scale: float) -> np.ndarray:
    """logits[j][i] = scale * (v_j . c_i); both inputs unit-normalized."""
    if V.dims != C.dims:
        raise ValidationError("logit operands disagree on dims")
    return scale * (V.data @ C.data.T)


def ce_loss_and_grads(
    logits: np.ndarray, labels: PseudoLabelSet, mask: np.ndarray
) -> tuple:
    """Mean cross-entropy over masked rows and its exact logit gradient.

    dlogits = (softmax - onehot) / masked_count on masked rows, zero
    elsewhere.
    """
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (logits.shape[0],):
        raise ValidationError("mask length must match the logit row count")
    count = int(mask.sum())
    if count == 0:
        raise ValidationError("empty mask: no samples to average the loss over")
    lab = labels.labels
    if lab.size != logits.shape[0]:
        raise ValidationError("labels length must match the logit row count")
    if lab[mask].min() < 0 or lab[mask].max() >= logits.shape[1]:
        raise ValidationError("masked label out of class range")

    rows = logits[mask]
    shifted = rows - rows.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    picked = probs[np.arange(count), lab[mask]]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())

    dmasked = probs.copy()
    dmasked[np.arange(count), lab[mask]] -= 1.0
    dmasked /= count
    dlogits = np.zeros_like(logits)
    dlogits[mask] = dmasked
    return loss, dlogits


def backprop_to_adapter(
    a: AffineAdapter,
    X: EmbeddingSet,
    dlogits: np.ndarray,
    partner: EmbeddingSet,
    scale: float = DEFAULT_LOGIT_SCALE,
    adapted_axis: int = 0,
    basis=None,
) -> tuple:
    """Exact gain/bias gradients through cosine_logits, the renormalization,
    and the affine map.

    X holds the raw rows feeding the adapter; partner is the fixed side of
    the dot product. adapted_axis says which logit axis the adapter outputs
    index: 0 when they are logit rows (visual branch), 1 when they are logit
    columns (text branch). With a projection basis, the adapted side is
    basis-projected before the renormalization (the projection commutes with
    the adapter's own renorm, so project(adapter_forward(X)) is this exact
    graph); the basis itself is a constant, gradients only pass through it.
    """
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if adapted_axis == 0:
        if dlogits.shape != (X.rows, partner.rows):
            raise ValidationError("dlogits shape mismatch for adapted rows")
        dY = scale * (dlogits @ partner.data)
    elif adapted_axis == 1:
        if dlogits.shape != (partner.rows, X.rows):
            raise ValidationError("dlogits shape mismatch for adapted columns")
        dY = scale * (dlogits.T @ partner.data)
    else:
        raise ValidationError("adapted_axis must be 0 or 1")

    pre = X.data * a.gain + a.bias
    projecting = basis is not None and basis.basis.size
    p = (pre @ basis.basis) @ basis.basis.T if projecting else pre
    norms = np.linalg.norm(p, axis=1, keepdims=True)
    y = p / norms
    # renormalization Jacobian: dP = (dY - y (y.dY)) / ||p||
    dP = (dY - y * np.sum(y * dY, axis=1, keepdims=True)) / norms
    dU = (dP @ basis.basis) @ basis.basis.T if projecting else dP
    dgain = np.sum(X.data * dU, axis=0)
    dbias = np.sum(dU, axis=0)
    return dgain, dbias


def class_centers(
    V: EmbeddingSet,
    labels: PseudoLabelSet,
    m: int,
    fallback: EmbeddingSet,
    mask: Optional[np.ndarray] = None,
) -> ClassCenters:
    """Unit-normalized mean of the rows assigned to each class.

    Classes with no assigned rows (or a cancelling mean) take the fallback
    row, typically the class's projected text embedding.
    """
    if fallback.rows != m:
        raise ValidationError("fallback must provide one row per class")
    if fallback.dims != V.dims:
        raise ValidationError("fallback dims differ from the visual dims")
    lab = labels.labels
    if lab.size != V.rows:
        raise ValidationError("labels length must match the visual row count")
    use = np.ones(V.rows, dtype=bool) if mask is None else np.asarray(mask, bool)
    centers = np.empty((m, V.dims))
    counts = np.bincount(lab[use], minlength=m).astype(np.int64)
    for i in range(m):
        sel = use & (lab == i)
        if not np.any(sel):
            centers[i] = fallback.data[i]
            continue
        mean = V.data[sel].mean(axis=0)
        norm = np.linalg.norm(mean)
        centers[i] = fallback.data[i] if norm <= ZERO_ROW_EPS else mean / norm
    return ClassCenters(centers, counts)


def sgd_step(params: list, grads: list, state: OptimizerState) -> None:
    """In-place SGD with momentum and weight decay:

    buf <- momentum*buf + grad + weight_decay*param
    param <- param - lr*buf
    """
    if len(params) != len(grads):
        raise ValidationError("params and grads length mismatch")
    if not state.momentum_buffers:
        state.momentum_buffers = [np.zeros_like(p) for p in params]
    if len(state.momentum_buffers) != len(params):
        raise ValidationError("momentum buffer count mismatch")
    for p, g, buf in zip(params, grads, state.momentum_buffers):
        if p.shape != g.shape or buf.shape != p.shape:
            raise ValidationError("parameter/gradient shape mismatch")
        buf *= state.momentum
        buf += g
        buf += state.weight_decay * p
        p -= state.lr * buf
    state.step_count += 1


def adapter_sgd_step(
    a: AffineAdapter, dgain: np.ndarray, dbias: np.ndarray, state: OptimizerState
) -> None:
    """One optimizer step on an adapter, then re-apply the gain floor."""
    sgd_step([a.gain, a.bias], [dgain, dbias], state)
    a.clamp_gain()
