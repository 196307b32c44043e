"""Diffusion backends: the runtime contract, a synthetic oracle and a registry."""
from .base import (
    FEATURE_SITE,
    MODULATION_SITE,
    Backend,
    BlockPath,
    CrossAttentionSite,
    LatentTrajectory,
    ModulationSpec,
    Placement,
    TimestepSchedule,
    pair_modulate,
    resolve_timestep,
)
from .synthetic import SyntheticBackend, SyntheticScene, SyntheticTrajectory

_REGISTRY = {}


def register_backend(name: str, factory) -> None:
    _REGISTRY[name] = factory


def get_backend(name: str, **kwargs) -> Backend:
    """Build a backend by name. ``synthetic`` needs ``scene=``; ``diffusers`` needs weights."""
    if name == "synthetic":
        scene = kwargs.pop("scene")
        return scene.backend(**kwargs)
    if name == "diffusers":
        from .diffusers_adapter import DiffusersBackend

        return DiffusersBackend(**kwargs)
    if name in _REGISTRY:
        return _REGISTRY[name](**kwargs)
    raise KeyError(f"unknown backend {name!r}")


__all__ = [
    "FEATURE_SITE", "MODULATION_SITE", "Backend", "BlockPath", "CrossAttentionSite",
    "LatentTrajectory", "ModulationSpec", "Placement", "TimestepSchedule", "SyntheticBackend",
    "SyntheticScene", "SyntheticTrajectory", "get_backend", "pair_modulate", "register_backend",
    "resolve_timestep",
]
