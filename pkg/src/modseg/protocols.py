"""Dataset-level evaluation of run archives under the three protocols."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imaging
from .correspondence import SegmentationMap
from .embeddings import (IGNORE_LABEL, concept_embeddings_modified, concept_embeddings_unsupervised,
                         classify_pixels)
from .errors import ValidationError
from .evaluation import (ConfusionMatrix, Report, classify_masks_openvocab, classify_pixels_openvocab,
                         class_iou, confusion, hungarian_match)

PROTOCOLS = ("traditional", "modified", "openvocab")
VARIANTS = ("ours", "naive")


@dataclass
class ProtocolInputs:
    """Everything a protocol might need besides the archives.

    ``ground_truth`` maps image id to a label grid at the original size.
    ``pixel_embeddings`` maps image id to an external ``H x W x d`` field.
    """

    ground_truth: dict | None = None
    num_classes: int | None = None
    class_names: list | None = None
    pixel_embeddings: dict | None = None
    class_vectors: np.ndarray | None = None
    ignore_label: int = IGNORE_LABEL
    seed: int = 0
    n_init: int = 10

    def require(self, protocol: str, ids) -> None:
        missing = []
        if self.ground_truth is None:
            missing.append("ground truth")
        else:
            absent = [i for i in ids if i not in self.ground_truth]
            if absent:
                missing.append(f"ground truth for {absent}")
        if protocol == "openvocab":
            if self.class_vectors is None:
                missing.append("class vectors")
            if self.pixel_embeddings is None:
                missing.append("external pixel embeddings")
            else:
                absent = [i for i in ids if i not in self.pixel_embeddings]
                if absent:
                    missing.append(f"external pixel embeddings for {absent}")
        if missing:
            raise ValidationError(f"{protocol} protocol is missing: {', '.join(missing)}")

    def classes(self) -> int:
        if self.num_classes is not None:
            return self.num_classes
        if self.class_vectors is not None:
            return len(self.class_vectors)
        top = -1
        for g in self.ground_truth.values():
            valid = g[g != self.ignore_label]
            if valid.size:
                top = max(top, int(valid.max()))
        if top < 0:
            raise ValidationError("no labeled pixels in the ground truth")
        return top + 1


def _accumulate(preds, gts, num_pred, num_gt, ignore) -> ConfusionMatrix:
    total = ConfusionMatrix(np.zeros((num_pred, num_gt), dtype=np.int64))
    for p, g in zip(preds, gts):
        total = total + confusion(p, g, num_pred, num_gt, ignore)
    return total


def _report(protocol, conf, assignment, n) -> Report:
    iou = class_iou(conf, assignment)
    value = float(np.nanmean(iou)) if not np.isnan(iou).all() else float("nan")
    return Report(protocol, value, list(iou), list(assignment), n)


def evaluate_entries(entries, protocol: str, inputs: ProtocolInputs, variant: str = "ours") -> Report:
    """Score archive entries (or anything with ``image_id`` and ``pixel_field``)."""
    if protocol not in PROTOCOLS:
        raise ValidationError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    entries = list(entries)
    if not entries:
        raise ValidationError("no archive entries to evaluate")
    ids = [e.image_id for e in entries]
    inputs.require(protocol, ids)
    gts = [np.asarray(inputs.ground_truth[i]) for i in ids]
    G = inputs.classes()
    ignore = inputs.ignore_label
    fields = [e.pixel_field(naive=variant == "naive") for e in entries]

    if protocol == "traditional":
        concepts = concept_embeddings_unsupervised(fields, G, seed=inputs.seed, n_init=inputs.n_init)
        preds = [classify_pixels(f, concepts) for f in fields]
        conf = _accumulate(preds, gts, G, G, ignore)
        return _report(protocol, conf, hungarian_match(conf), len(entries))

    if protocol == "modified":
        concepts = concept_embeddings_modified(fields, gts, G, ignore)
        preds = [classify_pixels(f, concepts) for f in fields]
    else:
        preds = []
        for f, i in zip(fields, ids):
            masks = SegmentationMap(f.segmentation.labels, f.segmentation.K)
            preds.append(classify_masks_openvocab(masks, inputs.pixel_embeddings[i], inputs.class_vectors))
    conf = _accumulate(preds, gts, G, G, ignore)
    return _report(protocol, conf, np.arange(G), len(entries))


def evaluate_pixel_baseline(ids, inputs: ProtocolInputs) -> Report:
    """Open-vocabulary baseline: classify every external pixel embedding independently."""
    inputs.require("openvocab", ids)
    G = inputs.classes()
    preds = [classify_pixels_openvocab(inputs.pixel_embeddings[i], inputs.class_vectors) for i in ids]
    conf = _accumulate(preds, [inputs.ground_truth[i] for i in ids], G, G, inputs.ignore_label)
    return _report("openvocab-pixel", conf, np.arange(G), len(ids))


def load_label_dir(directory, ids=None) -> dict:
    """Read ``<id>.png`` or ``<id>.npy`` label grids from a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"{directory} is not a directory")
    out = {}
    for p in sorted(directory.iterdir()):
        if ids is not None and p.stem not in ids:
            continue
        if p.suffix == ".npy":
            out[p.stem] = np.load(p)
        elif p.suffix.lower() == ".png":
            out[p.stem] = imaging.load_label_png(p)
    return out


def load_array_dir(directory, ids=None) -> dict:
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"{directory} is not a directory")
    return {p.stem: np.load(p) for p in sorted(directory.glob("*.npy")) if ids is None or p.stem in ids}


def format_table(reports: dict, class_names=None) -> str:
    """Side-by-side per-class IoU table; ``reports`` maps a column title to a Report."""
    titles = list(reports)
    n = max(len(r.class_iou) for r in reports.values())
    names = list(class_names) if class_names else [f"class {i}" for i in range(n)]
    width = max(12, *(len(t) for t in titles))
    name_w = max(8, *(len(s) for s in names))

    def cell(v):
        return f"{'-':>{width}}" if v is None or np.isnan(v) else f"{100 * v:>{width}.2f}"

    lines = [f"{'':<{name_w}}  " + "  ".join(f"{t:>{width}}" for t in titles)]
    for i, name in enumerate(names):
        vals = [r.class_iou[i] if i < len(r.class_iou) else None for r in reports.values()]
        lines.append(f"{name:<{name_w}}  " + "  ".join(cell(v) for v in vals))
    lines.append(f"{'mIoU':<{name_w}}  " + "  ".join(cell(r.miou) for r in reports.values()))
    return "\n".join(lines) + "\n"


def write_reports(path, reports: dict, config: dict | None = None, class_names=None) -> None:
    """Write ``<path>.json`` (machine-readable) and ``<path>.txt`` (table)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"config": config, "reports": {k: r.as_dict() for k, r in reports.items()}}
    path.with_suffix(".json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    path.with_suffix(".txt").write_text(format_table(reports, class_names))
