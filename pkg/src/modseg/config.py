"""Run configuration: defaults, validation, hashing and (de)serialization."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .backend.base import CrossAttentionSite, Placement, TimestepSchedule
from .correspondence import CorrespondenceConfig
from .errors import ValidationError

# Keys that change where or how fast a run executes but not what it computes.
OPERATIONAL_KEYS = frozenset({"output_dir", "workers", "cache_dir", "store_difference_maps"})


@dataclass(frozen=True)
class RunConfig:
    backend: str = "synthetic"
    seed: int = 0
    K: int = 30
    n_init: int = 1
    t_f: int = 1
    t_m: int = 281
    strength: float = 10.0
    feature_site: str = "upward-16-1"
    modulation_site: str = "upward-16-3"
    placement: str = "post_projection"
    inject_attention: bool = True
    every_step: bool = True
    sigma: float = 3.0
    embedding_timestep: int = 200
    embedding_site: str = "upward-16-1"
    steps: int = 50
    max_timestep: int = 1000
    prompt: str = ""
    checkpoint: str = "CompVis/stable-diffusion-v1-4"
    workers: int = 1
    cache_dir: str | None = None
    store_difference_maps: bool = False
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError(f"K must be >= 1, got {self.K}")
        if self.n_init < 1:
            raise ValidationError("n_init must be >= 1")
        if self.strength < 0:
            raise ValidationError("strength (lambda) must be >= 0")
        if self.sigma < 0:
            raise ValidationError("sigma must be >= 0 (0 disables smoothing)")
        for name in ("t_f", "t_m", "embedding_timestep"):
            t = getattr(self, name)
            if not 1 <= t <= self.max_timestep:
                raise ValidationError(f"{name}={t} outside [1, {self.max_timestep}]")
        for name in ("feature_site", "modulation_site", "embedding_site"):
            try:
                CrossAttentionSite.parse(getattr(self, name))
            except (ValueError, ValidationError) as exc:
                raise ValidationError(f"{name}: {exc}") from exc
        Placement(self.placement)
        self.schedule()

    def schedule(self) -> TimestepSchedule:
        return TimestepSchedule(self.steps, self.max_timestep)

    def site(self, which: str) -> CrossAttentionSite:
        return CrossAttentionSite.parse(getattr(self, f"{which}_site"))

    def correspondence(self, timestep: int | None = None) -> CorrespondenceConfig:
        return CorrespondenceConfig(
            site=self.site("modulation"),
            timestep=self.t_m if timestep is None else timestep,
            strength=self.strength,
            placement=Placement(self.placement),
            inject_attention=self.inject_attention,
            every_step=self.every_step,
            sigma=self.sigma,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def semantic_dict(self) -> dict:
        return {k: v for k, v in self.to_dict().items() if k not in OPERATIONAL_KEYS}

    def content_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
