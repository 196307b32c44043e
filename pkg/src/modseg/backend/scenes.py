"""Random synthetic scenes for tests, acceptance runs and experiment scripts."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .synthetic import SyntheticScene, block_majority, min_pairwise_distance

LAYOUTS = ("bands", "voronoi", "waves")


def make_palette(rng: np.random.Generator, n: int, low: float = 0.3, high: float = 0.7,
                 min_gap: float = 0.08) -> np.ndarray:
    # Kept inside [0.3, 0.7] so a +-0.25 response along (1,1,1)/sqrt(3) stays in [0, 1].
    for _ in range(1000):
        colors = rng.uniform(low, high, size=(n, 3))
        if min_pairwise_distance(colors) >= min_gap:
            return colors
    raise RuntimeError(f"could not draw {n} separated colors")


def make_prototypes(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return rng.standard_normal((n, dim))


def _bands(rng, H, W, n):
    vertical = rng.random() < 0.5
    length = W if vertical else H
    minimum = 48
    cuts = rng.multinomial(length - minimum * n, np.ones(n) / n) + minimum
    edges = np.concatenate([[0], np.cumsum(cuts)])
    order = rng.permutation(n)
    coord = np.arange(length)
    idx = np.searchsorted(edges, coord, side="right") - 1
    line = order[idx]
    return np.broadcast_to(line[None, :] if vertical else line[:, None], (H, W)).copy()


def _voronoi(rng, H, W, n, sites_per_label=4):
    n_sites = n * sites_per_label
    pts = rng.uniform(0, 1, size=(n_sites, 2)) * [H, W]
    owner = np.concatenate([np.arange(n), rng.integers(0, n, n_sites - n)])
    grid = np.stack(np.mgrid[0:H, 0:W], -1).reshape(-1, 2)
    _, nearest = cKDTree(pts).query(grid)
    return owner[nearest].reshape(H, W)


def _waves(rng, H, W, n):
    """Tilted bands with sinusoidal boundaries; no triple junctions."""
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    angle = rng.uniform(-0.6, 0.6) + (np.pi / 2 if rng.random() < 0.5 else 0.0)
    u = np.cos(angle) * xx + np.sin(angle) * yy
    v = -np.sin(angle) * xx + np.cos(angle) * yy
    amp, period, phase = rng.uniform(6, 20), rng.uniform(120, 300), rng.uniform(0, 2 * np.pi)
    u = u + amp * np.sin(2 * np.pi * v / period + phase)
    lo, hi = u.min(), u.max()
    edges = np.sort(rng.uniform(0.1, 0.9, n - 1))
    idx = np.searchsorted(lo + edges * (hi - lo), u, side="right")
    return rng.permutation(n)[idx]


def make_scene(seed: int, n_labels: int = 5, size: tuple[int, int] = (512, 512),
               layout: str = "voronoi", dim: int = 32, noise_fraction: float = 0.0,
               downsample: int = 32) -> SyntheticScene:
    """Draw a scene whose every label owns at least one block-majority cell.

    ``noise_fraction`` sets the feature noise amplitude as a fraction of the
    smallest distance between label prototypes.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; choose from {LAYOUTS}")
    rng = np.random.default_rng(seed)
    H, W = size
    for _ in range(200):
        labels = {"bands": _bands, "voronoi": _voronoi, "waves": _waves}[layout](rng, H, W, n_labels)
        cells = block_majority(labels, downsample, n_labels)
        if len(np.unique(cells)) == n_labels:
            break
    else:
        raise RuntimeError(f"could not draw a {layout} scene with {n_labels} resolvable labels")
    prototypes = make_prototypes(rng, n_labels, dim)
    colors = make_palette(rng, n_labels)
    amplitude = noise_fraction * min_pairwise_distance(prototypes) if n_labels > 1 else noise_fraction
    return SyntheticScene(labels, prototypes, colors, downsample=downsample, seed=seed,
                          noise_amplitude=float(amplitude))
