"""Image-resolution segmentation from per-mask modulation responses.

For every low-resolution mask the backend denoises twice with offsets -lambda
and +lambda; the per-pixel RGB distance between the two results measures how
strongly each pixel corresponds to that mask. Pixels take the mask with the
strongest (smoothed) response.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .backend.base import (
    MODULATION_SITE,
    Backend,
    CrossAttentionSite,
    LatentTrajectory,
    ModulationSpec,
    Placement,
    pair_modulate,
)
from .errors import MaskFailure, ValidationError
from .lowres import LowResSegmentation


@dataclass(eq=False)
class SegmentationMap:
    labels: np.ndarray
    K: int
    provenance: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not self.provenance:
            self.provenance = list(range(self.K))
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.K):
            raise ValidationError(f"labels must lie in [0, {self.K})")
        if len(set(self.provenance)) != len(self.provenance):
            raise ValidationError("label provenance must be injective")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class CorrespondenceConfig:
    site: CrossAttentionSite = MODULATION_SITE
    timestep: int = 281
    strength: float = 10.0
    placement: Placement = Placement.POST_PROJECTION
    inject_attention: bool = True
    every_step: bool = True
    sigma: float = 3.0


def difference_map(minus: np.ndarray, plus: np.ndarray) -> np.ndarray:
    """Per-pixel Euclidean distance over the RGB channels."""
    minus = np.asarray(minus, dtype=np.float64)
    plus = np.asarray(plus, dtype=np.float64)
    if minus.shape != plus.shape or minus.ndim != 3 or minus.shape[2] != 3:
        raise ValidationError(f"need two H x W x 3 images of equal shape, got {minus.shape} and {plus.shape}")
    return np.sqrt(((minus - plus) ** 2).sum(-1))


def gaussian_kernel1d(sigma: float, radius: int | None = None) -> np.ndarray:
    radius = math.ceil(4 * sigma) if radius is None else radius
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _separable(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    for axis in (0, 1):
        x = ndimage.correlate1d(x, k, axis=axis, mode="constant", cval=0.0)
    return x


@lru_cache(maxsize=8)
def _border_weights(shape: tuple[int, int], sigma: float) -> np.ndarray:
    w = _separable(np.ones(shape), gaussian_kernel1d(sigma))
    w.flags.writeable = False
    return w


def gaussian_smooth(dmap: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur truncated at ``ceil(4 sigma)``, renormalized at the borders.

    Out-of-image taps are dropped and the remaining weights rescaled to sum to
    one, so constant maps are fixed points.
    """
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    dmap = np.asarray(dmap, dtype=np.float64)
    num = _separable(dmap, gaussian_kernel1d(sigma))
    return np.maximum(num / _border_weights(dmap.shape, float(sigma)), 0.0)


def assign_labels(maps) -> SegmentationMap:
    """Per-pixel argmax over the difference maps; ties go to the lowest index."""
    if len(maps) == 0:
        raise ValidationError("need at least one difference map")
    stack = np.stack([np.asarray(m) for m in maps])
    return SegmentationMap(stack.argmax(0), len(stack))


def extract_correspondences(backend: Backend, trajectory: LatentTrajectory,
                            segmentation: LowResSegmentation,
                            config: CorrespondenceConfig = CorrespondenceConfig(),
                            workers: int = 1, cache=None) -> list[np.ndarray]:
    """One smoothed float32 difference map per low-resolution mask.

    Masks are independent; with ``workers > 1`` they run on a thread pool and
    results are collected in mask order. ``cache`` is any object with
    ``load(index)`` returning an array or None, and ``store(index, array)``.
    """

    def one(i):
        if cache is not None:
            hit = cache.load(i)
            if hit is not None:
                return hit
        try:
            spec = ModulationSpec(config.site, config.timestep, 0.0, segmentation.masks[i],
                                  config.placement, config.inject_attention, config.every_step)
            minus, plus = pair_modulate(backend, trajectory, spec, config.strength)
            d = difference_map(minus, plus)
            if config.sigma:
                d = gaussian_smooth(d, config.sigma)
        except Exception as exc:
            raise MaskFailure(i, exc) from exc
        d = d.astype(np.float32)
        if cache is not None:
            cache.store(i, d)
        return d

    indices = range(segmentation.K)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, indices))
    return [one(i) for i in indices]


def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Interpolation weights for half-pixel-aligned bilinear resizing (``n_out x n_in``)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    M = np.zeros((n_out, n_in))
    M[np.arange(n_out), lo] += 1 - frac
    M[np.arange(n_out), hi] += frac
    return M


def naive_upsample(segmentation: LowResSegmentation, H: int, W: int) -> SegmentationMap:
    """Bilinearly upsample each mask's one-hot channel, then take the per-pixel argmax."""
    h, w = segmentation.shape
    if H < h or W < w:
        raise ValidationError(f"target {H}x{W} is smaller than the {h}x{w} grid")
    Ry, Rx = bilinear_matrix(H, h), bilinear_matrix(W, w)
    channels = Ry @ segmentation.masks.astype(np.float64) @ Rx.T
    return SegmentationMap(channels.argmax(0), segmentation.K)
