"""Deterministic synthetic diffusion backend with a known ground truth.

A :class:`SyntheticScene` is a hidden label field rendered as flat colors. The
backend decodes the label field back from the image and emulates the pieces of
a latent diffusion model the pipeline depends on:

* query features at a 32x downsampled grid equal the prototype of each block's
  majority label plus bounded seeded noise;
* inversion records an edit-friendly DDPM trajectory that reconstructs the
  input exactly;
* a masked offset ``c`` at a cross-attention site shifts the color of every
  pixel whose label owns modulated cells, by ``g(c)`` times the fraction of that
  label's cells inside the mask, with ``g(c) = scale * tanh(c / 10)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import UnsupportedSiteError, ValidationError
from . import ddpm
from .base import (
    BlockPath,
    CrossAttentionSite,
    LatentTrajectory,
    ModulationSpec,
    Placement,
    TimestepSchedule,
    check_image,
    resolve_timestep,
)

UP16_SITES = tuple(CrossAttentionSite(BlockPath.UPWARD, 16, i) for i in (1, 2, 3))

# Color directions for the modulation response and for the layout drift that
# appears when attention maps are not injected.
_RESPONSE_DIR = np.ones(3) / np.sqrt(3.0)
_DRIFT_DIR = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)


@dataclass(eq=False)
class SyntheticScene:
    labels: np.ndarray
    prototypes: np.ndarray
    colors: np.ndarray
    downsample: int = 32
    seed: int = 0
    noise_amplitude: float = 0.0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        H, W = self.labels.shape
        S = len(self.prototypes)
        if H % self.downsample or W % self.downsample:
            raise ValidationError(f"scene size {H}x{W} not divisible by {self.downsample}")
        if self.labels.min() < 0 or self.labels.max() >= S:
            raise ValidationError("label field references a missing prototype")
        if self.colors.shape != (S, 3):
            raise ValidationError(f"need one RGB color per label, got {self.colors.shape}")
        if self.noise_amplitude < 0:
            raise ValidationError("noise amplitude must be nonnegative")
        gap = min_pairwise_distance(self.prototypes)
        # Equality is admitted so that amplitude = gap / 4 is a valid setting.
        if S > 1 and not gap >= 4 * self.noise_amplitude:
            raise ValidationError(
                f"prototype gap {gap:.4g} must be at least 4x the noise amplitude {self.noise_amplitude:.4g}")
        if S > 1 and min_pairwise_distance(self.colors) == 0:
            raise ValidationError("label colors must be distinct")

    @property
    def n_labels(self) -> int:
        return len(self.prototypes)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def render(self) -> np.ndarray:
        return self.colors[self.labels]

    def block_labels(self) -> np.ndarray:
        return block_majority(self.labels, self.downsample, self.n_labels)

    def backend(self, **kwargs) -> "SyntheticBackend":
        return SyntheticBackend(self.prototypes, self.colors, downsample=self.downsample,
                                seed=self.seed, noise_amplitude=self.noise_amplitude, **kwargs)

    def to_dict(self) -> dict:
        return {
            "kind": "synthetic_scene",
            "height": int(self.labels.shape[0]),
            "width": int(self.labels.shape[1]),
            "labels": self.labels.ravel().tolist(),
            "prototypes": self.prototypes.tolist(),
            "colors": self.colors.tolist(),
            "downsample": self.downsample,
            "seed": self.seed,
            "noise_amplitude": self.noise_amplitude,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticScene":
        labels = np.asarray(d["labels"], dtype=np.int64).reshape(d["height"], d["width"])
        return cls(labels, d["prototypes"], d["colors"], d.get("downsample", 32),
                   d.get("seed", 0), d.get("noise_amplitude", 0.0))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SyntheticScene":
        return cls.from_dict(json.loads(Path(path).read_text()))


def min_pairwise_distance(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return np.inf
    d = np.linalg.norm(points[:, None] - points[None], axis=-1)
    return float(d[np.triu_indices(len(points), 1)].min())


def block_majority(labels: np.ndarray, factor: int, n_labels: int | None = None) -> np.ndarray:
    """Most frequent label of each ``factor x factor`` block; ties go to the lower label."""
    H, W = labels.shape
    h, w = H // factor, W // factor
    n = int(labels.max()) + 1 if n_labels is None else n_labels
    blocks = labels.reshape(h, factor, w, factor).transpose(0, 2, 1, 3).reshape(h, w, -1)
    counts = np.zeros((h, w, n), dtype=np.int64)
    for k in range(n):
        counts[..., k] = (blocks == k).sum(-1)
    return counts.argmax(-1)


def response_gain(c: float, scale: float = 0.25) -> float:
    return scale * float(np.tanh(c / 10.0))


@dataclass(eq=False)
class SyntheticTrajectory(LatentTrajectory):
    x0: np.ndarray = field(default=None, repr=False)
    labels: np.ndarray = field(default=None, repr=False)
    cell_labels: np.ndarray = field(default=None, repr=False)
    cell_counts: np.ndarray = field(default=None, repr=False)


class SyntheticBackend:
    """Ground-truth stand-in for a latent diffusion model.

    The backend holds the per-label prototypes and palette; the label field is
    read back from whatever image is inverted. Instances are immutable and all
    methods are pure, so concurrent calls are safe.
    """

    name = "synthetic"
    sites = UP16_SITES

    def __init__(self, prototypes, colors, downsample: int = 32, seed: int = 0,
                 noise_amplitude: float = 0.0, response_scale: float = 0.25,
                 projection_gain: float = 0.8, attention_drift: float = 0.05,
                 persistence: float = 0.5, max_timestep: int = 1000):
        self.prototypes = np.asarray(prototypes, dtype=np.float64)
        self.colors = np.asarray(colors, dtype=np.float64)
        self.downsample = downsample
        self.seed = seed
        self.noise_amplitude = float(noise_amplitude)
        self.response_scale = response_scale
        self.projection_gain = projection_gain
        self.attention_drift = attention_drift
        self.persistence = persistence
        self.abar = ddpm.alphas_cumprod(max_timestep)

    @property
    def n_labels(self) -> int:
        return len(self.prototypes)

    def decode_labels(self, image: np.ndarray) -> np.ndarray:
        """Nearest palette entry per pixel."""
        flat = image.reshape(-1, 3)
        d = ((flat[:, None, :] - self.colors[None]) ** 2).sum(-1)
        return d.argmin(-1).reshape(image.shape[:2])

    def invert(self, image: np.ndarray, schedule: TimestepSchedule | None = None,
               seed: int = 0) -> SyntheticTrajectory:
        image = check_image(image)
        schedule = schedule or TimestepSchedule()
        if schedule.max_timestep + 1 != len(self.abar):
            raise ValidationError("schedule T does not match the backend noise schedule")
        labels = self.decode_labels(image)
        cells = block_majority(labels, self.downsample, self.n_labels)
        H, W = labels.shape
        return SyntheticTrajectory(
            schedule=schedule, seed=seed, image_shape=(H, W),
            grid_shape=(H // self.downsample, W // self.downsample),
            x0=np.array(image, dtype=np.float64), labels=labels, cell_labels=cells,
            cell_counts=np.bincount(cells.ravel(), minlength=self.n_labels),
        )

    # -- inversion internals -------------------------------------------------

    def latent(self, traj: SyntheticTrajectory, t: int) -> np.ndarray:
        """Recorded noisy latent at a scheduled timestep (independent noise per step)."""
        if t == 0:
            return traj.x0
        eps = np.random.default_rng([traj.seed, t]).standard_normal(traj.x0.shape)
        a = self.abar[t]
        return np.sqrt(a) * traj.x0 + np.sqrt(1.0 - a) * eps

    def _predict_x0(self, traj, t, deviation):
        return traj.x0 + self.persistence * deviation / np.sqrt(self.abar[t])

    def scheduled_noise(self, traj: SyntheticTrajectory, t: int) -> np.ndarray:
        """Noise ``z_t`` that takes the recorded ``x_t`` exactly onto the recorded ``x_prev``."""
        prev = traj.schedule.previous(t)
        cx0, cxt, sigma = ddpm.posterior_coefficients(self.abar[t], self.abar[prev])
        x_t = self.latent(traj, t)
        mean = cx0 * self._predict_x0(traj, t, 0.0) + cxt * x_t
        if sigma == 0:
            return np.zeros_like(x_t)
        return (self.latent(traj, prev) - mean) / sigma

    def reconstruct(self, traj: SyntheticTrajectory) -> np.ndarray:
        """Full unmodulated denoise from the top of the schedule.

        Each step adds the change of the posterior mean to the recorded latent,
        so an unperturbed run returns the recorded states bit for bit.
        """
        steps = traj.schedule.descending_from(traj.schedule.step_timesteps[-1])
        x = self.latent(traj, steps[0])
        for t in steps:
            prev = traj.schedule.previous(t)
            cx0, cxt, _ = ddpm.posterior_coefficients(self.abar[t], self.abar[prev])
            rec = self.latent(traj, t)
            mean = cx0 * self._predict_x0(traj, t, x - rec) + cxt * x
            mean_rec = cx0 * self._predict_x0(traj, t, rec - rec) + cxt * rec
            x = self.latent(traj, prev) + (mean - mean_rec)
        return x

    # -- contract -------------------------------------------------------------

    def _check_site(self, site: CrossAttentionSite) -> None:
        if site not in self.sites:
            raise UnsupportedSiteError(f"site {site} is not exposed by the synthetic backend")

    def extract_features(self, traj: SyntheticTrajectory, site: CrossAttentionSite,
                         timestep: int) -> np.ndarray:
        self._check_site(site)
        if not 1 <= timestep <= traj.schedule.max_timestep:
            raise ValidationError(f"timestep {timestep} outside [1, {traj.schedule.max_timestep}]")
        feats = self.prototypes[traj.cell_labels]
        if self.noise_amplitude > 0:
            h, w, d = feats.shape
            rng = np.random.default_rng([self.seed, site.layer_index, site.resolution, timestep])
            direction = rng.standard_normal((h, w, d))
            direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
            radius = rng.random((h, w, 1)) ** (1.0 / d)
            feats = feats + self.noise_amplitude * radius * direction
        return feats

    def denoising_steps(self, traj: LatentTrajectory, spec: ModulationSpec) -> list[int]:
        t_m = resolve_timestep(traj.schedule, spec.timestep)
        return traj.schedule.descending_from(t_m)

    def _propagate(self, traj, steps, injected, offsets: np.ndarray) -> np.ndarray:
        """Deviation from the recorded trajectory after the remaining steps.

        ``offsets`` holds one injected x0-offset per tracked component; it is
        added to the model prediction at every step in ``injected``.
        """
        dev = np.zeros_like(offsets)
        for t in steps:
            prev = traj.schedule.previous(t)
            cx0, cxt, _ = ddpm.posterior_coefficients(self.abar[t], self.abar[prev])
            inj = offsets if t in injected else 0.0
            dev = cx0 * (self.persistence * dev / np.sqrt(self.abar[t]) + inj) + cxt * dev
        return dev

    def modulated_denoise(self, traj: SyntheticTrajectory, spec: ModulationSpec) -> np.ndarray:
        self._check_site(spec.site)
        if spec.mask.shape != traj.grid_shape:
            raise ValidationError(
                f"mask shape {spec.mask.shape} does not match feature grid {traj.grid_shape}")
        steps = self.denoising_steps(traj, spec)
        injected = set(steps) if spec.every_step else {steps[0]}
        c = spec.offset
        if spec.placement is Placement.PRE_PROJECTION:
            c = c * self.projection_gain
        amplitude = response_gain(c, self.response_scale)

        # The per-step offset is normalized so that the net color change after
        # the remaining steps is amplitude * overlap. Every pixel of one label
        # follows identical arithmetic, so the deviation is tracked per label,
        # plus one component for layout drift.
        unit = self._propagate(traj, steps, injected, np.ones(1))[0]
        inside = np.bincount(traj.cell_labels[spec.mask], minlength=self.n_labels)
        overlap = np.divide(inside, traj.cell_counts, out=np.zeros(self.n_labels),
                            where=traj.cell_counts > 0)
        drift = 0.0 if spec.inject_attention else self.attention_drift
        offsets = amplitude * np.append(overlap, drift) / unit
        dev = self._propagate(traj, steps, injected, offsets)
        out = traj.x0 + dev[traj.labels][..., None] * _RESPONSE_DIR
        if not spec.inject_attention:
            out = out + dev[-1] * _DRIFT_DIR
        return out
