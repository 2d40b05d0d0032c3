"""Evaluation metrics, the seeded misaligned-modality benchmark generator,
and report emission (canonical JSON + CSV, byte-deterministic)."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .containers import ClassCatalog, EmbeddingSet, LabelVector, UNLABELED
from .errors import ValidationError


def top1_accuracy(preds: LabelVector, gt: LabelVector) -> float:
    if len(preds) != len(gt):
        raise ValidationError("prediction and ground-truth length mismatch")
    if np.any(gt.values == UNLABELED):
        raise ValidationError("ground truth contains UNLABELED entries")
    return float(np.mean(preds.values == gt.values))


@dataclass
class EpochRecord:
    epoch: int
    loss_text: float
    loss_visual: float
    agreement_fraction: float
    pseudo_label_accuracy: Optional[float]
    ensemble_accuracy: Optional[float]
    steps: int = 0
    warning: str = ""

    CSV_FIELDS = (
        "epoch",
        "loss_text",
        "loss_visual",
        "agreement_fraction",
        "pseudo_label_accuracy",
        "ensemble_accuracy",
        "steps",
        "warning",
    )

    def as_row(self) -> list:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        return [fmt(getattr(self, name)) for name in self.CSV_FIELDS]


@dataclass
class EvalReport:
    per_epoch: list = field(default_factory=list)
    zero_shot_accuracy: Optional[float] = None
    bootstrap_pseudo_accuracy: Optional[float] = None
    final_accuracy: Optional[float] = None
    peak_accuracy: Optional[float] = None
    peak_epoch: Optional[int] = None
    notes: dict = field(default_factory=dict)

    def finalize(self) -> None:
        """Fill final/peak fields from the recorded epochs."""
        scored = [
            r for r in self.per_epoch if r.ensemble_accuracy is not None
        ]
        if not scored:
            return
        self.final_accuracy = scored[-1].ensemble_accuracy
        best = max(scored, key=lambda r: (r.ensemble_accuracy, -r.epoch))
        self.peak_accuracy = best.ensemble_accuracy
        self.peak_epoch = best.epoch

    def as_dict(self) -> dict:
        return {
            "zero_shot_accuracy": self.zero_shot_accuracy,
            "bootstrap_pseudo_accuracy": self.bootstrap_pseudo_accuracy,
            "final_accuracy": self.final_accuracy,
            "peak_accuracy": self.peak_accuracy,
            "peak_epoch": self.peak_epoch,
            "notes": self.notes,
            "per_epoch": [
                dict(zip(EpochRecord.CSV_FIELDS, r.as_row())) for r in self.per_epoch
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(EpochRecord.CSV_FIELDS)
            for rec in self.per_epoch:
                writer.writerow(rec.as_row())


@dataclass
class SynthSpec:
    """Misaligned two-modality benchmark: tight text clusters pushed away
    from the image clusters along one shared offset direction."""

    classes: int = 10
    per_class: int = 200
    dims: int = 64
    sigma_v: float = 0.35
    sigma_t: float = 0.05
    delta: float = 1.5
    seed: int = 7
    multi_templates: int = 8

    def __post_init__(self):
        if self.classes < 2:
            raise ValidationError("need at least two classes")
        if self.dims < self.classes + 1:
            raise ValidationError("dims must be at least classes + 1")
        if self.per_class < 1:
            raise ValidationError("need at least one sample per class")


REFERENCE_SPEC = SynthSpec()


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


# share of the visual spread assigned to the modality offset all images carry
VISUAL_OFFSET_SHARE = 0.7


def generate_synth(spec: SynthSpec):
    """Deterministically generate (visual EmbeddingSet, ClassCatalog, gt).

    Class directions are an orthonormal frame, and each modality sits off
    from them by its own shared displacement. Text anchors are
    class_direction + delta * text_offset + Gaussian(sigma_t), with the
    text offset orthogonal to every class direction, so anchors huddle
    together far from the images. Images are class_direction + visual_offset
    + jitter, where the visual offset is one shared Gaussian draw and the
    per-image jitter carries the rest of the sigma_v budget (total
    per-coordinate deviation from the class direction is Gaussian(sigma_v)).
    The two offsets realize the cross-modality gap: nearest-text
    classification suffers per-class tilts from the visual offset, while
    the class clusters themselves stay coherent, which is exactly the
    regime where span projection plus label propagation recovers.
    """
    m, d, s = spec.classes, spec.dims, spec.per_class
    rng = np.random.default_rng(spec.seed)

    raw = rng.standard_normal((d, m + 1))
    q, r = np.linalg.qr(raw)
    q = q * np.where(np.diag(r) < 0.0, -1.0, 1.0)
    class_dirs = q[:, :m].T  # m x d orthonormal rows
    offset = q[:, m]  # unit, orthogonal to all class directions

    def text_draw(i):
        return _unit(
            class_dirs[i] + spec.delta * offset + spec.sigma_t * rng.standard_normal(d)
        )

    single = np.stack([text_draw(i) for i in range(m)])
    multi = np.empty((m, d))
    for i in range(m):
        per_template = np.stack([text_draw(i) for _ in range(spec.multi_templates)])
        multi[i] = _unit(per_template.mean(axis=0))

    visual_offset = VISUAL_OFFSET_SHARE * spec.sigma_v * rng.standard_normal(d)
    sigma_jitter = spec.sigma_v * np.sqrt(1.0 - VISUAL_OFFSET_SHARE**2)
    visuals = np.empty((m * s, d))
    gt = np.empty(m * s, dtype=np.int64)
    for i in range(m):
        jitter = sigma_jitter * rng.standard_normal((s, d))
        block = class_dirs[i] + visual_offset + jitter
        block /= np.linalg.norm(block, axis=1, keepdims=True)
        visuals[i * s : (i + 1) * s] = block
        gt[i * s : (i + 1) * s] = i

    names = tuple(f"class_{i}" for i in range(m))
    catalog = ClassCatalog(
        names,
        EmbeddingSet(single, EmbeddingSet.sequential_ids(m, "cls"), unit_norm=True),
        EmbeddingSet(multi, EmbeddingSet.sequential_ids(m, "cls"), unit_norm=True),
    )
    V = EmbeddingSet(visuals, EmbeddingSet.sequential_ids(m * s, "img"), unit_norm=True)
    return V, catalog, LabelVector(gt)


def split_transductive_inductive(
    V: EmbeddingSet, gt: LabelVector, fraction: float, seed: int
):
    """Seeded stratified split; returns ((V1, gt1), (V2, gt2)) with part 1
    holding ~fraction of every class."""
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"fraction must be in (0, 1), got {fraction}")
    if len(gt) != V.rows:
        raise ValidationError("labels length must match the row count")
    if np.any(gt.values == UNLABELED):
        raise ValidationError("split requires fully labeled data")
    rng = np.random.default_rng(seed)
    first = []
    second = []
    for cls in np.unique(gt.values):
        members = np.flatnonzero(gt.values == cls)
        if members.size < 2:
            raise ValidationError(
                f"class {int(cls)} has {members.size} sample(s); need at least 2"
            )
        members = members[rng.permutation(members.size)]
        take = int(round(fraction * members.size))
        take = min(max(take, 1), members.size - 1)
        first.append(members[:take])
        second.append(members[take:])
    idx1 = np.sort(np.concatenate(first))
    idx2 = np.sort(np.concatenate(second))

    def subset(idx):
        return (
            EmbeddingSet(
                V.data[idx], tuple(V.ids[i] for i in idx), unit_norm=V.unit_norm
            ),
            LabelVector(gt.values[idx]),
        )

    return subset(idx1), subset(idx2)
