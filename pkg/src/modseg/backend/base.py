"""Contract between the segmentation pipeline and a diffusion runtime.

A backend inverts an image into a latent trajectory, exposes query features at
cross-attention sites, and re-runs the denoising process with a constant offset
added to a masked region of one cross-attention output.
"""
from __future__ import annotations

import dataclasses
import enum
import logging
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from ..errors import SizingError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_T = 1000
DEFAULT_STEPS = 50


@dataclass(frozen=True)
class TimestepSchedule:
    total_steps: int = DEFAULT_STEPS
    max_timestep: int = DEFAULT_T
    step_timesteps: tuple[int, ...] = ()

    def __post_init__(self):
        if not 1 <= self.total_steps <= self.max_timestep:
            raise ValidationError(f"need 1 <= total_steps <= {self.max_timestep}, got {self.total_steps}")
        if not self.step_timesteps:
            stride = self.max_timestep // self.total_steps
            steps = tuple(1 + i * stride for i in range(self.total_steps))
            object.__setattr__(self, "step_timesteps", steps)
        ts = self.step_timesteps
        if len(ts) != self.total_steps:
            raise ValidationError(f"schedule has {len(ts)} timesteps, expected {self.total_steps}")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("schedule timesteps must be strictly increasing")
        if ts[0] < 1 or ts[-1] > self.max_timestep:
            raise ValidationError(f"schedule timesteps must lie in [1, {self.max_timestep}]")

    def snap(self, t: int) -> int:
        """Nearest scheduled timestep (ties go to the smaller one)."""
        ts = np.asarray(self.step_timesteps)
        return int(ts[np.argmin(np.abs(ts - t))])

    def descending_from(self, t: int) -> list[int]:
        return [s for s in reversed(self.step_timesteps) if s <= t]

    def previous(self, t: int) -> int:
        """Scheduled timestep below ``t``; 0 stands for the clean image."""
        idx = self.step_timesteps.index(t)
        return self.step_timesteps[idx - 1] if idx > 0 else 0


class BlockPath(str, enum.Enum):
    UPWARD = "upward"
    DOWNWARD = "downward"


class Placement(str, enum.Enum):
    POST_PROJECTION = "post_projection"
    PRE_PROJECTION = "pre_projection"


@dataclass(frozen=True)
class CrossAttentionSite:
    path: BlockPath = BlockPath.UPWARD
    resolution: int = 16
    layer_index: int = 1

    def __post_init__(self):
        object.__setattr__(self, "path", BlockPath(self.path))
        if self.resolution not in (8, 16, 32, 64):
            raise ValidationError(f"resolution must be one of 8/16/32/64, got {self.resolution}")
        if self.layer_index not in (1, 2, 3):
            raise ValidationError(f"layer_index must be 1, 2 or 3, got {self.layer_index}")

    def __str__(self):
        return f"{self.path.value}-{self.resolution}-{self.layer_index}"

    @classmethod
    def parse(cls, text: str) -> "CrossAttentionSite":
        path, res, layer = text.split("-")
        return cls(BlockPath(path), int(res), int(layer))


FEATURE_SITE = CrossAttentionSite(BlockPath.UPWARD, 16, 1)
MODULATION_SITE = CrossAttentionSite(BlockPath.UPWARD, 16, 3)


@dataclass(frozen=True, eq=False)
class ModulationSpec:
    site: CrossAttentionSite
    timestep: int
    offset: float
    mask: np.ndarray
    placement: Placement = Placement.POST_PROJECTION
    inject_attention: bool = True
    # False: offset only at t_m itself; True: at every step from t_m down to 1.
    every_step: bool = True

    def __post_init__(self):
        object.__setattr__(self, "placement", Placement(self.placement))
        mask = np.asarray(self.mask)
        if mask.ndim != 2:
            raise ValidationError(f"modulation mask must be 2-D, got shape {mask.shape}")
        object.__setattr__(self, "mask", mask.astype(bool))
        if not np.isfinite(self.offset):
            raise ValidationError("modulation offset must be finite")

    def with_offset(self, offset: float) -> "ModulationSpec":
        return dataclasses.replace(self, offset=offset)


@dataclass(eq=False)
class LatentTrajectory:
    """Result of inversion; backends subclass this with their own state."""

    schedule: TimestepSchedule
    seed: int
    image_shape: tuple[int, int]
    grid_shape: tuple[int, int]
    prompt: str = ""
    meta: dict = field(default_factory=dict)


def check_image(image: np.ndarray, multiple: int = 64) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"expected an H x W x 3 RGB image, got shape {image.shape}")
    for name, value in zip(("height", "width"), image.shape[:2]):
        if value % multiple:
            raise SizingError(name, value, multiple)
    return image


@runtime_checkable
class Backend(Protocol):
    name: str
    sites: tuple[CrossAttentionSite, ...]

    def invert(self, image: np.ndarray, schedule: TimestepSchedule, seed: int = 0) -> LatentTrajectory: ...

    def extract_features(self, trajectory: LatentTrajectory, site: CrossAttentionSite,
                         timestep: int) -> np.ndarray: ...

    def modulated_denoise(self, trajectory: LatentTrajectory, spec: ModulationSpec) -> np.ndarray: ...

    def reconstruct(self, trajectory: LatentTrajectory) -> np.ndarray: ...


_warned_snaps: set = set()


def resolve_timestep(schedule: TimestepSchedule, t: int) -> int:
    """Snap ``t`` onto the schedule, warning (once per process) when it moves."""
    snapped = schedule.snap(t)
    if snapped != t and (t, snapped) not in _warned_snaps:
        _warned_snaps.add((t, snapped))
        log.warning("timestep %d is not scheduled; using %d", t, snapped)
    return snapped


def pair_modulate(backend: Backend, trajectory: LatentTrajectory, spec: ModulationSpec,
                  strength: float) -> tuple[np.ndarray, np.ndarray]:
    """Run the modulated denoising twice, with offsets ``-strength`` and ``+strength``.

    Both runs start from the same trajectory, so they share its scheduled noise
    and, when attention injection is on, the same recorded attention maps.
    """
    if strength < 0 or not np.isfinite(strength):
        raise ValidationError(f"modulation strength must be finite and >= 0, got {strength}")
    minus = backend.modulated_denoise(trajectory, spec.with_offset(-strength))
    plus = backend.modulated_denoise(trajectory, spec.with_offset(+strength))
    return minus, plus
