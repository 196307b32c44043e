"""Conformance checklist any backend must pass before it is trusted by the pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import SizingError
from .base import Backend, ModulationSpec, pair_modulate, resolve_timestep

RECONSTRUCTION_TOLERANCE = 1e-2


@dataclass
class ConformanceReport:
    checks: dict = field(default_factory=dict)  # name -> (passed, detail)

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks[name] = (bool(ok), detail)

    def summary(self) -> str:
        return "; ".join(f"{name}: {'ok' if ok else 'FAILED'}{f' ({d})' if d else ''}"
                         for name, (ok, d) in self.checks.items())


def test_image(size: int = 512, seed: int = 0) -> np.ndarray:
    """Smooth seeded RGB image in [0, 1] used when no image is supplied."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    chans = [0.5 + 0.25 * np.sin(2 * np.pi * (rng.uniform(0.5, 2) * xx + rng.uniform(0.5, 2) * yy)
                                 + rng.uniform(0, 2 * np.pi)) for _ in range(3)]
    return np.stack(chans, -1)


def check_conformance(backend: Backend, config=None, image: np.ndarray | None = None,
                      tolerance: float = RECONSTRUCTION_TOLERANCE) -> ConformanceReport:
    """Run the checklist; ``config`` defaults to the stock run configuration."""
    from ..config import RunConfig

    config = config or RunConfig()
    image = test_image() if image is None else np.asarray(image, dtype=np.float64)
    report = ConformanceReport()
    schedule = config.schedule()

    sites = {s: config.site(s) for s in ("feature", "modulation", "embedding")}
    missing = [str(s) for s in sites.values() if s not in backend.sites]
    report.add("default sites exposed", not missing, ", ".join(missing))

    try:
        backend.invert(image[:450], schedule, config.seed)
        report.add("sizing error on 450-row image", False, "accepted")
    except SizingError as exc:
        report.add("sizing error on 450-row image", exc.dimension == "height", str(exc))

    traj = backend.invert(image, schedule, config.seed)
    recon = backend.reconstruct(traj)
    report.add("reconstruction shape", recon.shape == image.shape, str(recon.shape))

    feats = backend.extract_features(traj, sites["feature"], resolve_timestep(schedule, config.t_f))
    h, w = traj.grid_shape
    report.add("feature grid", feats.shape[:2] == (h, w) and np.isfinite(feats).all(), str(feats.shape))

    mask = np.zeros((h, w), bool)
    mask[: h // 2, : w // 2] = True
    spec = ModulationSpec(sites["modulation"], resolve_timestep(schedule, config.t_m), 0.0, mask,
                          placement=config.placement, inject_attention=config.inject_attention,
                          every_step=config.every_step)
    zero = backend.modulated_denoise(traj, spec)
    err = float(np.abs(zero - recon).max())
    report.add("c = 0 reproduces reconstruction", err <= tolerance, f"max abs {err:.2e} <= {tolerance:g}")

    minus, plus = pair_modulate(backend, traj, spec, config.strength)
    again = pair_modulate(backend, traj, spec, config.strength)
    report.add("pair modulation deterministic",
               np.array_equal(minus, again[0]) and np.array_equal(plus, again[1]))
    report.add("modulation has an effect", float(np.abs(plus - minus).max()) > 0)
    return report


# Not a pytest test despite the name.
test_image.__test__ = False
