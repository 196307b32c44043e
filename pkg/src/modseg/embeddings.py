"""Mask, pixel and concept embeddings for unsupervised semantic segmentation.

A pixel's embedding is the embedding of the mask it belongs to, so a pixel
field is stored as a segmentation map plus one vector per mask instead of an
``H x W x d`` array.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correspondence import SegmentationMap
from .errors import InvalidKError, ValidationError
from .lowres import FeatureMap, LowResSegmentation, kmeans

IGNORE_LABEL = 255


@dataclass(eq=False)
class MaskEmbedding:
    vector: np.ndarray
    mask_index: int


@dataclass(eq=False)
class PixelEmbeddingField:
    segmentation: SegmentationMap
    embeddings: np.ndarray  # one row per low-resolution mask

    def label_vectors(self) -> np.ndarray:
        """Embedding of each segmentation label, following its provenance."""
        return self.embeddings[np.asarray(self.segmentation.provenance)]

    def pixel_counts(self) -> np.ndarray:
        return np.bincount(self.segmentation.labels.ravel(), minlength=self.segmentation.K)

    def dense(self) -> np.ndarray:
        return self.label_vectors()[self.segmentation.labels]


@dataclass(eq=False)
class ConceptEmbeddings:
    vectors: np.ndarray
    source: str
    present: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.present is None:
            self.present = np.ones(len(self.vectors), dtype=bool)
        if len(self.vectors) < 1 or not np.isfinite(self.vectors[self.present]).all():
            raise ValidationError("concept embeddings must be nonempty and finite")

    @property
    def C(self) -> int:
        return len(self.vectors)


def mask_embedding(features: FeatureMap | np.ndarray, mask: np.ndarray, mask_index: int = 0) -> MaskEmbedding:
    """Mean feature vector over the cells of a low-resolution mask."""
    values = features.values if isinstance(features, FeatureMap) else np.asarray(features, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != values.shape[:2]:
        raise ValidationError(f"mask shape {mask.shape} does not match features {values.shape[:2]}")
    if not mask.any():
        raise ValidationError(f"mask {mask_index} is empty")
    return MaskEmbedding(values[mask].mean(0), mask_index)


def mask_embeddings(features: FeatureMap | np.ndarray, segmentation: LowResSegmentation) -> np.ndarray:
    return np.stack([mask_embedding(features, m, i).vector for i, m in enumerate(segmentation.masks)])


def concept_embeddings_unsupervised(fields, C: int, seed: int = 0, n_init: int = 1) -> ConceptEmbeddings:
    """k-means over all mask embeddings in a dataset, each weighted by its pixel count.

    Equivalent to clustering every pixel embedding, without materializing them.
    """
    fields = list(fields)
    if not fields:
        raise ValidationError("dataset is empty")
    vectors, weights = [], []
    for f in fields:
        counts = f.pixel_counts()
        keep = counts > 0
        vectors.append(f.label_vectors()[keep])
        weights.append(counts[keep])
    X = np.concatenate(vectors)
    w = np.concatenate(weights).astype(np.float64)
    distinct = len(np.unique(X, axis=0))
    if not 1 <= C <= distinct:
        raise InvalidKError(f"C={C} must lie in [1, {distinct}] (distinct pixel embeddings)")
    _, centers, _, _ = kmeans(X, C, seed, weights=w, n_init=n_init)
    return ConceptEmbeddings(centers, "kmeans_dataset")


def class_pixel_counts(field: PixelEmbeddingField, gt: np.ndarray, num_classes: int,
                       ignore_label: int = IGNORE_LABEL) -> np.ndarray:
    """``K x num_classes`` count of pixels with each (segment label, gt class) pair."""
    gt = np.asarray(gt)
    labels = field.segmentation.labels
    if gt.shape != labels.shape:
        raise ValidationError(f"ground truth {gt.shape} does not match segmentation {labels.shape}")
    valid = gt != ignore_label
    if (gt[valid] < 0).any() or (gt[valid] >= num_classes).any():
        raise ValidationError(f"ground-truth classes must lie in [0, {num_classes}) or be {ignore_label}")
    K = field.segmentation.K
    idx = labels[valid] * num_classes + gt[valid]
    return np.bincount(idx, minlength=K * num_classes).reshape(K, num_classes)


def concept_embeddings_modified(fields, ground_truths, num_classes: int | None = None,
                                ignore_label: int = IGNORE_LABEL) -> ConceptEmbeddings:
    """Per-class mean of pixel embeddings, using ground-truth annotations.

    Classes that never occur are flagged in ``present`` and carry NaN vectors.
    """
    fields = list(fields)
    ground_truths = [np.asarray(g) for g in ground_truths]
    if len(fields) != len(ground_truths):
        raise ValidationError("need one ground-truth map per pixel field")
    if num_classes is None:
        valid = [g[g != ignore_label] for g in ground_truths]
        num_classes = int(max((v.max() for v in valid if v.size), default=-1)) + 1
    if num_classes < 1:
        raise ValidationError("no labeled pixels in the dataset")
    d = fields[0].embeddings.shape[1]
    sums = np.zeros((num_classes, d))
    totals = np.zeros(num_classes)
    for f, g in zip(fields, ground_truths):
        counts = class_pixel_counts(f, g, num_classes, ignore_label)
        sums += counts.T @ f.label_vectors()
        totals += counts.sum(0)
    if totals.sum() == 0:
        raise ValidationError("no labeled pixels in the dataset")
    present = totals > 0
    vectors = np.full((num_classes, d), np.nan)
    vectors[present] = sums[present] / totals[present, None]
    return ConceptEmbeddings(vectors, "class_mean", present)


def nearest_concept(vectors: np.ndarray, concepts: ConceptEmbeddings) -> np.ndarray:
    """Index of the closest (Euclidean) present concept per row; ties go to the lowest index."""
    diff = vectors[:, None, :] - np.nan_to_num(concepts.vectors)[None]
    dist = (diff ** 2).sum(-1)
    dist[:, ~concepts.present] = np.inf
    return dist.argmin(1)


def classify_pixels(field: PixelEmbeddingField, concepts: ConceptEmbeddings) -> SegmentationMap:
    vectors = field.label_vectors()
    if vectors.shape[1] != concepts.vectors.shape[1]:
        raise ValidationError("pixel and concept embeddings differ in dimension")
    per_label = nearest_concept(vectors, concepts)
    return SegmentationMap(per_label[field.segmentation.labels], concepts.C)
