"""Overlay figures for archive entries."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import imaging


def _panel(entry, labels, colors):
    H0, W0 = labels.shape
    base = imaging.resize_image(entry.image(), H0, W0)
    return imaging.overlay(base, labels, colors)


def render_overlay(entry, out_dir, seed: int = 0, gap: int = 8) -> list[Path]:
    """Write ``<id>_overlay.png`` and a naive-vs-ours ``<id>_compare.png`` panel."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    colors = imaging.palette(seed)
    ours = _panel(entry, entry.labels, colors)
    naive = _panel(entry, entry.naive_labels, colors)
    original = imaging.resize_image(entry.image(), *entry.labels.shape)
    sep = np.ones((ours.shape[0], gap, 3))
    compare = np.concatenate([original, sep, naive, sep, ours], axis=1)
    paths = [out_dir / f"{entry.image_id}_overlay.png", out_dir / f"{entry.image_id}_compare.png"]
    imaging.save_rgb_png(paths[0], ours)
    imaging.save_rgb_png(paths[1], compare)
    return paths
