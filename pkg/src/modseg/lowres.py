"""Low-resolution segmentation: k-means over a grid of query features."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidKError, ValidationError

MAX_ITER = 300


@dataclass(eq=False)
class FeatureMap:
    """``h x w`` grid of ``d``-dimensional feature vectors."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or 0 in self.values.shape:
            raise ValidationError(f"feature map must be a nonempty h x w x d array, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValidationError("feature map contains non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, self.dim)


@dataclass(eq=False)
class LowResSegmentation:
    masks: np.ndarray  # K x h x w bool
    centroids: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.masks)

    @property
    def shape(self) -> tuple[int, int]:
        return self.masks.shape[1:]

    def label_grid(self) -> np.ndarray:
        return self.masks.argmax(0)

    @classmethod
    def from_labels(cls, labels: np.ndarray, K: int | None = None) -> "LowResSegmentation":
        labels = np.asarray(labels)
        K = int(labels.max()) + 1 if K is None else K
        masks = labels[None] == np.arange(K)[:, None, None]
        return cls(masks, np.zeros((K, 0)), 0.0)


def mask_to_flat(mask: np.ndarray) -> np.ndarray:
    """Row-major ``h x w`` mask to an ``hw x 1`` column."""
    return np.asarray(mask).reshape(-1, 1)


def flat_to_mask(flat: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return np.asarray(flat).reshape(shape)


def _sq_dists(X, C):
    # Direct differences rather than the |x|^2 - 2xc + |c|^2 expansion, which
    # loses the exact zeros that tie-breaking and the inertia oracle rely on.
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)


def kmeans_pp_init(X: np.ndarray, K: int, rng: np.random.Generator,
                   weights: np.ndarray | None = None, n_trials: int | None = None) -> np.ndarray:
    """Greedy k-means++ seeding.

    Each step draws ``n_trials`` candidates with probability proportional to
    weight * D^2 and keeps the one that lowers the seeding potential most.
    """
    n = len(X)
    w = np.ones(n) if weights is None else weights
    if n_trials is None:
        n_trials = 2 + int(np.log(K))
    centers = [X[rng.choice(n, p=w / w.sum())]]
    closest = ((X - centers[0]) ** 2).sum(-1)
    for _ in range(1, K):
        p = w * closest
        total = p.sum()
        # All remaining mass sits on existing centers (duplicate points).
        cand = rng.choice(n, size=n_trials, p=w / w.sum() if total <= 0 else p / total)
        d = np.minimum(closest[None], ((X[None] - X[cand][:, None]) ** 2).sum(-1))
        best = int(np.argmin(d @ w))
        centers.append(X[cand[best]])
        closest = d[best]
    return np.array(centers)


def _fix_empty(assign, d_own, K):
    """Move the point farthest from its centroid into each empty cluster."""
    counts = np.bincount(assign, minlength=K)
    d_own = d_own.copy()
    for k in np.flatnonzero(counts == 0):
        candidates = counts[assign] > 1
        i = int(np.argmax(np.where(candidates, d_own, -np.inf)))
        counts[assign[i]] -= 1
        assign[i] = k
        counts[k] = 1
        d_own[i] = -np.inf
    return assign


def _lloyd(X, w, centers, max_iter):
    K = len(centers)
    assign = None
    history = []
    for _ in range(max_iter):
        d = _sq_dists(X, centers)
        new = d.argmin(1)
        new = _fix_empty(new, d[np.arange(len(X)), new], K)
        for k in range(K):
            sel = new == k
            centers[k] = (w[sel, None] * X[sel]).sum(0) / w[sel].sum()
        history.append(float((w * ((X - centers[new]) ** 2).sum(-1)).sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
    return new, centers, history


def _hartigan(X, w, assign, centers, max_iter):
    """Single-point moves that lower the weighted SSE once centroids are updated.

    Escapes Lloyd fixed points where a point sits closer to another centroid
    only after accounting for the centroid shift its own removal causes.
    """
    K = len(centers)
    mass = np.bincount(assign, weights=w, minlength=K)
    history = []
    for _ in range(max_iter):
        moved = False
        for i in range(len(X)):
            a = assign[i]
            if mass[a] <= w[i]:
                continue
            d = ((centers - X[i]) ** 2).sum(-1)
            gain = w[i] * mass[a] / (mass[a] - w[i]) * d[a]
            cost = w[i] * mass / (mass + w[i]) * d
            cost[a] = np.inf
            b = int(np.argmin(cost))
            if cost[b] < gain * (1 - 1e-12):
                centers[a] = (centers[a] * mass[a] - w[i] * X[i]) / (mass[a] - w[i])
                centers[b] = (centers[b] * mass[b] + w[i] * X[i]) / (mass[b] + w[i])
                mass[a] -= w[i]
                mass[b] += w[i]
                assign[i] = b
                moved = True
        if not moved:
            break
        # Recompute from scratch so incremental updates do not accumulate error.
        for k in range(K):
            sel = assign == k
            centers[k] = (w[sel, None] * X[sel]).sum(0) / w[sel].sum()
        history.append(float((w * ((X - centers[assign]) ** 2).sum(-1)).sum()))
    return assign, centers, history


def kmeans(X: np.ndarray, K: int, seed: int = 0, weights: np.ndarray | None = None,
           n_init: int = 1, max_iter: int = MAX_ITER, refine: bool = True):
    """Weighted Lloyd k-means with k-means++ seeding.

    Lloyd runs until the assignment stops changing (or ``max_iter``), then an
    optional Hartigan pass applies single-point moves. Returns ``(assignment,
    centroids, inertia, history)``; ``history`` is the weighted within-cluster
    SSE after each iteration of the best restart.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if not 1 <= K <= n:
        raise InvalidKError(f"K={K} must lie in [1, {n}]")
    if not np.isfinite(X).all():
        raise ValidationError("cannot cluster non-finite features")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if (w <= 0).any():
        raise ValidationError("k-means weights must be positive")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        centers = kmeans_pp_init(X, K, rng, w)
        assign, centers, history = _lloyd(X, w, centers, max_iter)
        if refine:
            assign, centers, more = _hartigan(X, w, assign, centers, max_iter)
            history += more
        if best is None or history[-1] < best[2]:
            best = (assign, centers, history[-1], history)
    return best


def kmeans_cluster(features: FeatureMap, K: int, seed: int = 0, n_init: int = 1,
                   max_iter: int = MAX_ITER, refine: bool = True) -> LowResSegmentation:
    """Partition the feature grid into ``K`` nonempty masks."""
    if not isinstance(features, FeatureMap):
        features = FeatureMap(features)
    h, w = features.shape
    if not 1 <= K <= h * w:
        raise InvalidKError(f"K={K} must lie in [1, {h * w}] for a {h}x{w} feature grid")
    assign, centers, inertia, history = kmeans(features.flat(), K, seed, n_init=n_init,
                                               max_iter=max_iter, refine=refine)
    labels = assign.reshape(h, w)
    masks = labels[None] == np.arange(K)[:, None, None]
    return LowResSegmentation(masks, centers, inertia, history)
