"""Segmentation metrics and the open-vocabulary mask classifier."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .correspondence import SegmentationMap
from .errors import TextEmbeddingError, UndefinedMetricError, ValidationError
from .embeddings import IGNORE_LABEL

DEFAULT_TEMPLATES = (
    "itap of a {}.",
    "a bad photo of a {}.",
    "a origami {}.",
    "a photo of the large {}.",
    "a {} in a video game.",
    "art of the {}.",
    "a photo of the small {}.",
)


@dataclass(eq=False)
class ConfusionMatrix:
    """Pixel counts indexed by (predicted class, ground-truth class)."""

    counts: np.ndarray
    ignored: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or (self.counts < 0).any():
            raise ValidationError("confusion counts must be a nonnegative 2-D array")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        P = max(self.counts.shape[0], other.counts.shape[0])
        G = max(self.counts.shape[1], other.counts.shape[1])
        out = np.zeros((P, G), dtype=np.int64)
        out[: self.counts.shape[0], : self.counts.shape[1]] += self.counts
        out[: other.counts.shape[0], : other.counts.shape[1]] += other.counts
        return ConfusionMatrix(out, self.ignored + other.ignored)


def _labels(x) -> np.ndarray:
    return x.labels if isinstance(x, SegmentationMap) else np.asarray(x)


def confusion(pred, gt, num_pred: int | None = None, num_gt: int | None = None,
              ignore_label: int = IGNORE_LABEL) -> ConfusionMatrix:
    pred_labels, gt = _labels(pred), np.asarray(gt)
    if pred_labels.shape != gt.shape:
        raise ValidationError(f"prediction {pred_labels.shape} and ground truth {gt.shape} differ in shape")
    if num_pred is None:
        num_pred = pred.K if isinstance(pred, SegmentationMap) else int(pred_labels.max()) + 1
    valid = gt != ignore_label
    if num_gt is None:
        num_gt = int(gt[valid].max()) + 1 if valid.any() else 1
    ignored = int((~valid).sum())
    if not valid.any():
        warnings.warn("every pixel carries the ignore label; confusion matrix is empty", RuntimeWarning)
    idx = pred_labels[valid].astype(np.int64) * num_gt + gt[valid]
    counts = np.bincount(idx, minlength=num_pred * num_gt).reshape(num_pred, num_gt)
    return ConfusionMatrix(counts, ignored)


def _check_assignment(assignment, conf: ConfusionMatrix) -> np.ndarray:
    a = np.asarray(assignment, dtype=np.int64)
    P, G = conf.counts.shape
    if a.shape != (P,):
        raise ValidationError(f"assignment must map each of the {P} predicted classes")
    matched = a[a >= 0]
    if (matched >= G).any() or len(np.unique(matched)) != len(matched):
        raise ValidationError("assignment must be an injective map into ground-truth classes")
    return a


def class_iou(conf: ConfusionMatrix, assignment=None) -> np.ndarray:
    """IoU of each ground-truth class under a pred->gt assignment (-1 = unmatched).

    Classes with an empty union come back as NaN.
    """
    counts = conf.counts
    P, G = counts.shape
    if assignment is None:
        assignment = np.where(np.arange(P) < G, np.arange(P), -1)
    a = _check_assignment(assignment, conf)
    rows, cols = counts.sum(1), counts.sum(0)
    inter = np.zeros(G)
    union = cols.astype(np.float64)
    for p, g in enumerate(a):
        if g >= 0:
            inter[g] = counts[p, g]
            union[g] = rows[p] + cols[g] - counts[p, g]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, np.nan)


def miou(conf: ConfusionMatrix, assignment=None) -> float:
    """Mean IoU over ground-truth classes; classes with an empty union are left out."""
    iou = class_iou(conf, assignment)
    if np.isnan(iou).all():
        raise UndefinedMetricError("every class has an empty union; mIoU is undefined")
    return float(np.nanmean(iou))


def hungarian_match(conf: ConfusionMatrix) -> np.ndarray:
    """Injective pred->gt assignment (-1 = unmatched) maximizing mIoU.

    Ground-truth classes with no pixels are left unmatched, which keeps them
    out of the mean. The counted classes are then fixed, so mIoU is a sum of
    pairwise IoUs and a linear assignment on the IoU matrix maximizes it.
    """
    counts = conf.counts
    P, G = counts.shape
    rows, cols = counts.sum(1), counts.sum(0)
    present = np.flatnonzero(cols > 0)
    assignment = np.full(P, -1, dtype=np.int64)
    if len(present) == 0:
        return assignment
    sub = counts[:, present]
    union = rows[:, None] + cols[None, present] - sub
    iou = np.where(union > 0, sub / np.maximum(union, 1), 0.0)
    r, c = linear_sum_assignment(iou, maximize=True)
    assignment[r] = present[c]
    return assignment


@dataclass(frozen=True)
class TextClassSpec:
    class_names: tuple[str, ...]
    templates: tuple[str, ...] = DEFAULT_TEMPLATES

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "templates", tuple(self.templates))
        if not self.templates:
            raise ValidationError("need at least one prompt template")
        for t in self.templates:
            if t.count("{}") != 1:
                raise ValidationError(f"template {t!r} must contain exactly one '{{}}' slot")

    def prompts(self, name: str) -> list[str]:
        return [t.format(name) for t in self.templates]


def _unit(v: np.ndarray, axis=-1) -> np.ndarray:
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if (norm == 0).any():
        raise ValidationError("cannot normalize a zero vector")
    return v / norm


def text_embeddings(spec: TextClassSpec, encoder) -> np.ndarray:
    """One unit vector per class: the renormalized mean of its normalized template embeddings.

    ``encoder`` maps a list of strings to an ``n x d`` array.
    """
    out = []
    for name in spec.class_names:
        try:
            emb = np.asarray(encoder(spec.prompts(name)), dtype=np.float64)
            if emb.ndim != 2 or len(emb) != len(spec.templates):
                raise ValueError(f"encoder returned shape {emb.shape}")
            out.append(_unit(_unit(emb).mean(0)))
        except Exception as exc:
            raise TextEmbeddingError(name, exc) from exc
    return np.stack(out)


def _cosine_argmax(vectors: np.ndarray, class_vectors: np.ndarray) -> np.ndarray:
    class_vectors = _unit(np.asarray(class_vectors, dtype=np.float64))
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    sims = (vectors / np.where(norms > 0, norms, 1.0)) @ class_vectors.T
    return sims.argmax(-1)


def classify_masks_openvocab(masks: SegmentationMap, pixel_embeddings: np.ndarray,
                             class_vectors: np.ndarray) -> SegmentationMap:
    """Label each mask with the class whose text vector best matches its mean pixel embedding."""
    emb = np.asarray(pixel_embeddings, dtype=np.float64)
    if emb.size == 0:
        raise ValidationError("external pixel-embedding field is empty")
    if emb.shape[:2] != masks.shape:
        raise ValidationError(f"pixel embeddings {emb.shape[:2]} do not match masks {masks.shape}")
    if emb.shape[2] != np.shape(class_vectors)[1]:
        raise ValidationError("pixel embeddings and class vectors differ in dimension")
    d = emb.shape[2]
    flat_labels = masks.labels.ravel()
    sums = np.zeros((masks.K, d))
    np.add.at(sums, flat_labels, emb.reshape(-1, d))
    counts = np.bincount(flat_labels, minlength=masks.K)
    means = sums / np.maximum(counts, 1)[:, None]
    per_mask = _cosine_argmax(means, class_vectors)
    return SegmentationMap(per_mask[masks.labels], len(class_vectors))


def classify_pixels_openvocab(pixel_embeddings: np.ndarray, class_vectors: np.ndarray) -> SegmentationMap:
    """Per-pixel baseline: cosine argmax of every embedding against the class vectors."""
    emb = np.asarray(pixel_embeddings, dtype=np.float64)
    return SegmentationMap(_cosine_argmax(emb, class_vectors), len(class_vectors))


@dataclass
class Report:
    protocol: str
    miou: float
    class_iou: list
    assignment: list = field(default_factory=list)
    n_images: int = 0

    def as_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "miou": self.miou,
            "class_iou": [None if np.isnan(v) else float(v) for v in self.class_iou],
            "assignment": [int(a) for a in self.assignment],
            "n_images": self.n_images,
        }
