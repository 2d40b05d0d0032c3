"""Two-branch cross-modality self-training with agreement-filtered pseudo
labels.

Each epoch, per branch: push the trainable side through its affine adapter,
rebuild the P2 projection from that branch's text set, project both sides,
regenerate pseudo labels by label propagation, then run mini-batch SGD on
the previous epoch's commonly-agreed labels. The text branch pulls adapted
text embeddings toward the projected visuals of their class; the visual
branch pulls adapted visuals toward their class centers. Fresh labels from
both branches are intersected at the epoch boundary to form the next
epoch's training mask, and inference averages the two branches' softmax
probabilities.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .adapt import (
    AffineAdapter,
    OptimizerState,
    adapter_forward,
    adapter_sgd_step,
    backprop_to_adapter,
    ce_loss_and_grads,
    class_centers,
    cosine_logits,
)
from .containers import ClassCatalog, EmbeddingSet, LabelVector
from .errors import EngineError, SelfTrainAborted, ValidationError
from .harness import EpochRecord, EvalReport, top1_accuracy
from .labelprop import LabelSource, PseudoLabelSet, propagate_union
from .projection import ProjectionBasis, Variant, compute_text_basis, project


class Branch(enum.Enum):
    TEXT = "text"
    VISUAL = "visual"


class Mode(enum.Enum):
    TRANSDUCTIVE = "transductive"
    INDUCTIVE = "inductive"


MIN_MASK_FRACTION = 0.01  # below this agreed share, an epoch skips updates


@dataclass
class RunConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 64
    max_iterations: int = 5000
    max_epochs: int = 50
    alpha: float = 0.99
    k: int = 20
    cg_tol: float = 1e-6
    cg_max_iter: int = 200
    logit_scale: float = 100.0
    seed: int = 0
    mode: Mode = Mode.TRANSDUCTIVE
    gamma: float = 1.0
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = Mode(self.mode)
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.max_epochs < 0 or self.max_iterations < 0:
            raise ValidationError("epoch/iteration limits must be nonnegative")

    @staticmethod
    def default_batch_size(num_classes: int) -> int:
        # large catalogs train with smaller batches
        return 32 if num_classes > 200 else 64

    def to_json(self) -> str:
        payload = {k: v for k, v in self.__dict__.items()}
        payload["mode"] = self.mode.value
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


@dataclass
class BranchState:
    branch: Branch
    adapter: AffineAdapter
    optimizer: OptimizerState
    text_templates: str
    basis: Optional["ProjectionBasis"] = None
    last_labels: Optional[PseudoLabelSet] = None
    centers: Optional[EmbeddingSet] = None


@dataclass
class EpochResult:
    state: BranchState
    labels: PseudoLabelSet
    logits: np.ndarray
    mean_loss: float
    steps: int
    warning: str = ""


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _branch_source(branch: Branch) -> LabelSource:
    return LabelSource.TEXT_BRANCH if branch is Branch.TEXT else LabelSource.VISUAL_BRANCH


def _pipeline(state: BranchState, V: EmbeddingSet, catalog: ClassCatalog, cfg: RunConfig):
    """Adapter pass, P2 projection and label propagation for one branch.

    Returns (text_src, t_hat, v_hat, fresh_labels) and stores the basis on
    the state.
    """
    text_src = catalog.text_embeddings(state.text_templates)
    if state.branch is Branch.TEXT:
        T_e = adapter_forward(state.adapter, text_src)
        V_e = V
    else:
        T_e = text_src
        V_e = adapter_forward(state.adapter, V)
    basis = compute_text_basis(T_e, Variant.P2)
    t_hat = project(basis, T_e)
    v_hat = project(basis, V_e)
    fresh = propagate_union(
        t_hat,
        v_hat,
        alpha=cfg.alpha,
        k=cfg.k,
        cg_tol=cfg.cg_tol,
        cg_max_iter=cfg.cg_max_iter,
        gamma=cfg.gamma,
        threads=cfg.threads,
        source=_branch_source(state.branch),
        logit_scale=cfg.logit_scale,
    )
    state.basis = basis
    state.last_labels = fresh
    return text_src, t_hat, v_hat, fresh


def _visual_centers(
    v_hat: EmbeddingSet,
    t_hat: EmbeddingSet,
    shared: PseudoLabelSet,
    m: int,
) -> EmbeddingSet:
    mask = shared.agreement_mask
    cc = class_centers(v_hat, shared, m, fallback=t_hat, mask=mask)
    return EmbeddingSet(
        cc.centers, EmbeddingSet.sequential_ids(m, "ctr"), unit_norm=True
    )


def run_epoch(
    state: BranchState,
    V: EmbeddingSet,
    catalog: ClassCatalog,
    shared_labels: PseudoLabelSet,
    cfg: RunConfig,
    epoch: int = 1,
    step_budget: Optional[int] = None,
) -> EpochResult:
    """One branch epoch: refresh labels, then SGD over the agreed samples."""
    if shared_labels.agreement_mask is None:
        raise ValidationError("run_epoch needs labels with an agreement mask")
    n = V.rows
    m = catalog.num_classes
    if len(shared_labels) != n:
        raise ValidationError("shared labels length must match the sample count")

    text_src, t_hat, v_hat, fresh = _pipeline(state, V, catalog, cfg)

    if state.branch is Branch.VISUAL:
        state.centers = _visual_centers(v_hat, t_hat, shared_labels, m)

    mask = shared_labels.agreement_mask
    masked_idx = np.flatnonzero(mask)
    warning = ""
    losses = []
    steps = 0
    min_needed = max(MIN_MASK_FRACTION * n, cfg.batch_size)
    budget = cfg.max_iterations if step_budget is None else step_budget
    if masked_idx.size < min_needed:
        warning = (
            f"epoch {epoch} ({state.branch.value}): {masked_idx.size} agreed "
            f"samples < {min_needed:.0f}; skipping updates"
        )
    else:
        rng = np.random.default_rng((cfg.seed, epoch, 0 if state.branch is Branch.TEXT else 1))
        order = masked_idx[rng.permutation(masked_idx.size)]
        for start in range(0, order.size, cfg.batch_size):
            if steps >= budget:
                break
            batch = order[start : start + cfg.batch_size]
            batch_labels = PseudoLabelSet(
                shared_labels.labels[batch],
                shared_labels.confidence[batch],
                shared_labels.source,
            )
            all_true = np.ones(batch.size, dtype=bool)
            if state.branch is Branch.TEXT:
                t_a = project(state.basis, adapter_forward(state.adapter, text_src))
                v_batch = EmbeddingSet(
                    v_hat.data[batch],
                    tuple(v_hat.ids[i] for i in batch),
                    unit_norm=True,
                )
                logits = cosine_logits(v_batch, t_a, cfg.logit_scale)
                loss, dlogits = ce_loss_and_grads(logits, batch_labels, all_true)
                dgain, dbias = backprop_to_adapter(
                    state.adapter, text_src, dlogits, v_batch,
                    scale=cfg.logit_scale, adapted_axis=1, basis=state.basis,
                )
            else:
                raw_batch = EmbeddingSet(
                    V.data[batch], tuple(V.ids[i] for i in batch), unit_norm=V.unit_norm
                )
                v_a = project(state.basis, adapter_forward(state.adapter, raw_batch))
                logits = cosine_logits(v_a, state.centers, cfg.logit_scale)
                loss, dlogits = ce_loss_and_grads(logits, batch_labels, all_true)
                dgain, dbias = backprop_to_adapter(
                    state.adapter, raw_batch, dlogits, state.centers,
                    scale=cfg.logit_scale, adapted_axis=0, basis=state.basis,
                )
            adapter_sgd_step(state.adapter, dgain, dbias, state.optimizer)
            losses.append(loss)
            steps += 1

    logits = branch_logits(state, V, catalog, cfg.logit_scale)
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    return EpochResult(state, fresh, logits, mean_loss, steps, warning)


def branch_logits(
    state: BranchState, X: EmbeddingSet, catalog: ClassCatalog, scale: float
) -> np.ndarray:
    """Prediction logits of one branch for arbitrary unit-norm rows.

    Both sides live in the branch's projected space: the text branch scores
    projected inputs against projected adapted text anchors, the visual
    branch scores projected adapted inputs against its class centers.
    """
    if state.basis is None:
        raise ValidationError("branch has no stored projection basis yet")
    if state.branch is Branch.TEXT:
        v_hat = project(state.basis, X)
        t_a = project(
            state.basis,
            adapter_forward(state.adapter, catalog.text_embeddings(state.text_templates)),
        )
        return cosine_logits(v_hat, t_a, scale)
    if state.centers is None:
        raise ValidationError("visual branch has no class centers yet")
    v_a = project(state.basis, adapter_forward(state.adapter, X))
    return cosine_logits(v_a, state.centers, scale)


def share_labels(labels_T: PseudoLabelSet, labels_V: PseudoLabelSet) -> PseudoLabelSet:
    """Intersect the two branches' assignments.

    The mask marks per-sample agreement; disagreeing rows keep the smaller
    of the two labels so the result is symmetric in its inputs (those rows
    are excluded from training by the mask anyway).
    """
    if len(labels_T) != len(labels_V):
        raise ValidationError("pseudo label sets have different lengths")
    mask = labels_T.labels == labels_V.labels
    values = np.where(mask, labels_T.labels, np.minimum(labels_T.labels, labels_V.labels))
    confidence = 0.5 * (labels_T.confidence + labels_V.confidence)
    return PseudoLabelSet(values, confidence, LabelSource.AGREED, agreement_mask=mask)


def zero_shot_predictions(V: EmbeddingSet, catalog: ClassCatalog) -> LabelVector:
    """Nearest-text argmax against the richest available text set."""
    text = catalog.text_embeddings("multi")
    return LabelVector(np.argmax(V.data @ text.data.T, axis=1))


def run_reclip(
    V: EmbeddingSet,
    catalog: ClassCatalog,
    cfg: RunConfig,
    eval_labels: Optional[LabelVector] = None,
):
    """Run the full two-branch adaptation loop.

    Epoch 0 bootstraps both branches' pseudo labels with adapters at init
    and takes their agreement as the first training mask; each following
    epoch trains on the previous epoch's shared labels and re-shares. Stops
    at min(max_iterations total steps, max_epochs). Returns
    ((text_state, visual_state), EvalReport).
    """
    n, m = V.rows, catalog.num_classes
    if eval_labels is not None:
        if len(eval_labels) != n:
            raise ValidationError("eval labels length must match the sample count")
        eval_labels.check_against(m)

    text_state = BranchState(
        Branch.TEXT,
        AffineAdapter.identity(V.dims),
        OptimizerState(cfg.lr, cfg.momentum, cfg.weight_decay),
        text_templates="single",
    )
    visual_state = BranchState(
        Branch.VISUAL,
        AffineAdapter.identity(V.dims),
        OptimizerState(cfg.lr, cfg.momentum, cfg.weight_decay),
        text_templates="multi",
    )
    report = EvalReport()
    report.notes["num_samples"] = n
    report.notes["num_classes"] = m
    report.notes["mode"] = cfg.mode.value

    def acc_of(values: np.ndarray) -> Optional[float]:
        if eval_labels is None:
            return None
        return top1_accuracy(LabelVector(values), eval_labels)

    report.zero_shot_accuracy = acc_of(zero_shot_predictions(V, catalog).values)

    try:
        # epoch 0: label propagation only, no updates
        _, t_hat_T, v_hat_T, fresh_T = _pipeline(text_state, V, catalog, cfg)
        _, t_hat_V, v_hat_V, fresh_V = _pipeline(visual_state, V, catalog, cfg)
        shared = share_labels(fresh_T, fresh_V)
        report.bootstrap_pseudo_accuracy = acc_of(shared.labels)

        visual_state.centers = _visual_centers(v_hat_V, t_hat_V, shared, m)
        logits_T = branch_logits(text_state, V, catalog, cfg.logit_scale)
        logits_V = branch_logits(visual_state, V, catalog, cfg.logit_scale)
        ensemble = 0.5 * (_softmax(logits_T) + _softmax(logits_V))
        report.per_epoch.append(
            EpochRecord(
                epoch=0,
                loss_text=float("nan"),
                loss_visual=float("nan"),
                agreement_fraction=float(shared.agreement_mask.mean()),
                pseudo_label_accuracy=acc_of(shared.labels),
                ensemble_accuracy=acc_of(np.argmax(ensemble, axis=1)),
            )
        )

        steps_used = 0
        for epoch in range(1, cfg.max_epochs + 1):
            if steps_used >= cfg.max_iterations:
                break
            budget = cfg.max_iterations - steps_used
            res_T = run_epoch(text_state, V, catalog, shared, cfg, epoch, budget)
            res_V = run_epoch(visual_state, V, catalog, shared, cfg, epoch, budget)
            steps_used += max(res_T.steps, res_V.steps)
            shared = share_labels(res_T.labels, res_V.labels)
            ensemble = 0.5 * (_softmax(res_T.logits) + _softmax(res_V.logits))
            warning = "; ".join(w for w in (res_T.warning, res_V.warning) if w)
            report.per_epoch.append(
                EpochRecord(
                    epoch=epoch,
                    loss_text=res_T.mean_loss,
                    loss_visual=res_V.mean_loss,
                    agreement_fraction=float(shared.agreement_mask.mean()),
                    pseudo_label_accuracy=acc_of(shared.labels),
                    ensemble_accuracy=acc_of(np.argmax(ensemble, axis=1)),
                    steps=max(res_T.steps, res_V.steps),
                    warning=warning,
                )
            )
        report.notes["steps_used"] = steps_used
    except EngineError as exc:
        report.finalize()
        raise SelfTrainAborted(
            f"self-training aborted: {exc}",
            partial_report=report,
            states=(text_state, visual_state),
        ) from exc

    report.finalize()
    return (text_state, visual_state), report


def infer(
    states, X: EmbeddingSet, catalog: ClassCatalog, logit_scale: float = 100.0
):
    """Ensemble inference: average the branches' softmax probabilities.

    Works on unseen rows too (inductive use): the stored bases, adapters and
    class centers are applied as-is, with no label propagation.
    """
    text_state, visual_state = states
    if X.dims != text_state.adapter.dims:
        raise ValidationError("input dims differ from the trained dims")
    logits_T = branch_logits(text_state, X, catalog, logit_scale)
    logits_V = branch_logits(visual_state, X, catalog, logit_scale)
    probs = 0.5 * (_softmax(logits_T) + _softmax(logits_V))
    return LabelVector(np.argmax(probs, axis=1)), probs
