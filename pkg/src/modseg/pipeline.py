"""End-to-end segmentation runs and the on-disk run archive.

Archive layout::

    <output_dir>/config.json          semantic config + its hash
    <output_dir>/timing.json          wall-clock and operational settings (not reproducible)
    <output_dir>/images/<id>/
        image.png                     working-resolution input
        meta.json                     sizes, timesteps used, provenance, hashes
        labels.png                    final labels at the original size (indexed PNG)
        labels_naive.png              bilinear-upsampled low-res labels, original size
        lowres_masks.npy              K x h*w row-major bitfields (np.packbits)
        embeddings.npy                float32 mask embeddings, K x d
        difference_maps.npy           optional float32 K x H x W
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from .backend import get_backend
from .backend.base import Backend, resolve_timestep
from .backend.synthetic import SyntheticScene
from .config import RunConfig
from .correspondence import SegmentationMap, assign_labels, extract_correspondences, naive_upsample
from .embeddings import PixelEmbeddingField, mask_embeddings
from .errors import StageError, ValidationError
from .lowres import FeatureMap, LowResSegmentation, kmeans_cluster

log = logging.getLogger(__name__)

CACHE_ENV = "MODSEG_CACHE_DIR"


@dataclass(eq=False)
class SegmentResult:
    image_id: str
    image: np.ndarray
    original_size: tuple[int, int]
    lowres: LowResSegmentation
    segmentation: SegmentationMap  # working resolution
    naive: SegmentationMap
    labels: np.ndarray  # original resolution
    naive_labels: np.ndarray
    embeddings: np.ndarray
    difference_maps: list | None = None
    meta: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def pixel_field(self, naive: bool = False) -> PixelEmbeddingField:
        labels = self.naive_labels if naive else self.labels
        return PixelEmbeddingField(SegmentationMap(labels, self.lowres.K), self.embeddings)


class DiffMapCache:
    """Per-mask difference maps on disk, keyed by image hash and config hash."""

    def __init__(self, root, image_hash: str, config_hash: str):
        self.dir = Path(root) / image_hash[:16] / config_hash[:16]

    def _path(self, index: int) -> Path:
        return self.dir / f"diff_{index:04d}.npy"

    def load(self, index: int):
        p = self._path(index)
        return np.load(p) if p.exists() else None

    def store(self, index: int, array: np.ndarray) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        tmp = self._path(index).with_suffix(f".{os.getpid()}.{index}.tmp")
        with open(tmp, "wb") as fh:
            np.save(fh, array.astype(np.float32))
        tmp.replace(self._path(index))


def load_source(path, scene: SyntheticScene | None = None):
    """Read an input file; returns ``(image_id, image, scene)``.

    Scene files (``.json``) render their own image and carry the palette the
    synthetic backend needs.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        scene = SyntheticScene.load(path)
        return path.stem, scene.render(), scene
    if not imaging.is_image_path(path):
        raise ValidationError(f"{path}: unsupported input type")
    return path.stem, imaging.load_image(path), scene


def make_backend(config: RunConfig, scene: SyntheticScene | None = None) -> Backend:
    if config.backend == "synthetic":
        if scene is None:
            raise ValidationError("the synthetic backend needs a scene file (input .json or --scene)")
        return get_backend("synthetic", scene=scene)
    if config.backend == "diffusers":
        return get_backend("diffusers", checkpoint=config.checkpoint, prompt=config.prompt)
    return get_backend(config.backend)


def image_hash(image: np.ndarray, scene: SyntheticScene | None = None) -> str:
    h = hashlib.sha256(np.ascontiguousarray(image, dtype=np.float64).tobytes())
    if scene is not None:
        h.update(json.dumps({k: v for k, v in scene.to_dict().items() if k != "labels"}).encode())
    return h.hexdigest()


class _Stages:
    def __init__(self):
        self.timing = {}

    def run(self, name, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timing[name] = round(time.perf_counter() - start, 6)


def segment(source, config: RunConfig, scene: SyntheticScene | None = None,
            backend: Backend | None = None, use_cache: bool = True) -> SegmentResult:
    """Segment one image (or synthetic scene file) with the full pipeline.

    ``source`` may also be an ``(image_id, image)`` pair already in memory.
    """
    st = _Stages()
    if isinstance(source, tuple):
        image_id, image = source
    else:
        image_id, image, scene = st.run("load", load_source, source, scene)
    image = np.asarray(image, dtype=np.float64)
    H0, W0 = image.shape[:2]
    H, W = imaging.resize_rule(H0, W0)
    work = st.run("resize", imaging.resize_image, image, H, W)
    if backend is None:
        backend = st.run("backend", make_backend, config, scene)

    schedule = config.schedule()
    traj = st.run("invert", backend.invert, work, schedule, config.seed)
    t_f = resolve_timestep(schedule, config.t_f)
    t_m = resolve_timestep(schedule, config.t_m)
    t_e = resolve_timestep(schedule, config.embedding_timestep)
    feats = st.run("features", backend.extract_features, traj, config.site("feature"), t_f)
    lowres = st.run("cluster", kmeans_cluster, FeatureMap(feats), config.K, config.seed, config.n_init)

    cache = None
    cache_root = config.cache_dir or os.environ.get(CACHE_ENV)
    if use_cache and cache_root:
        cache = DiffMapCache(cache_root, image_hash(work, scene), config.content_hash())
    maps = st.run("correspondence", extract_correspondences, backend, traj, lowres,
                  config.correspondence(t_m), config.workers, cache)
    seg = st.run("assign", assign_labels, maps)
    naive = st.run("naive", naive_upsample, lowres, H, W)
    emb_feats = st.run("features", backend.extract_features, traj, config.site("embedding"), t_e)
    embeddings = st.run("embed", mask_embeddings, emb_feats, lowres).astype(np.float32)

    meta = {
        "image_id": image_id,
        "original_size": [H0, W0],
        "working_size": [H, W],
        "grid_size": list(lowres.shape),
        "K": lowres.K,
        "provenance": seg.provenance,
        "timesteps": {
            "t_f": {"requested": config.t_f, "used": t_f},
            "t_m": {"requested": config.t_m, "used": t_m},
            "embedding": {"requested": config.embedding_timestep, "used": t_e},
        },
        "denoising_steps": len(schedule.descending_from(t_m)),
        "inertia": lowres.inertia,
        "config_hash": config.content_hash(),
        "image_hash": image_hash(work, scene),
        "backend": backend.name,
    }
    return SegmentResult(
        image_id=image_id, image=work, original_size=(H0, W0), lowres=lowres,
        segmentation=seg, naive=naive,
        labels=imaging.resize_nearest(seg.labels, H0, W0),
        naive_labels=imaging.resize_nearest(naive.labels, H0, W0),
        embeddings=embeddings, difference_maps=maps, meta=meta, timing=st.timing,
    )


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _save_labels(path: Path, labels: np.ndarray, colors: np.ndarray) -> None:
    if labels.max() <= 255:
        imaging.save_label_png(path, labels, colors)
    else:
        from PIL import Image

        Image.fromarray(labels.astype(np.uint16)).save(path)


def write_entry(root, result: SegmentResult, config: RunConfig) -> Path:
    d = Path(root) / "images" / result.image_id
    d.mkdir(parents=True, exist_ok=True)
    colors = imaging.palette(config.seed)
    imaging.save_rgb_png(d / "image.png", result.image)
    _save_labels(d / "labels.png", result.labels, colors)
    _save_labels(d / "labels_naive.png", result.naive_labels, colors)
    K = result.lowres.K
    np.save(d / "lowres_masks.npy", np.packbits(result.lowres.masks.reshape(K, -1), axis=1))
    np.save(d / "embeddings.npy", result.embeddings.astype(np.float32))
    if config.store_difference_maps and result.difference_maps is not None:
        np.save(d / "difference_maps.npy", np.stack(result.difference_maps).astype(np.float32))
    _dump_json(d / "meta.json", result.meta)
    return d


def write_run(root, config: RunConfig) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    _dump_json(root / "config.json", {"config": config.semantic_dict(), "config_hash": config.content_hash()})


def run_segment(inputs, config: RunConfig, scene: SyntheticScene | None = None) -> list[SegmentResult]:
    """Segment every input and write the archive under ``config.output_dir``."""
    root = Path(config.output_dir)
    write_run(root, config)
    results, timing = [], {}
    for src in inputs:
        res = segment(src, config, scene=scene)
        write_entry(root, res, config)
        timing[res.image_id] = res.timing
        log.info("segmented %s in %.2fs", res.image_id, sum(res.timing.values()))
        results.append(res)
    _dump_json(root / "timing.json", {
        "images": timing,
        "operational": {k: v for k, v in config.to_dict().items() if k not in config.semantic_dict()},
    })
    return results


@dataclass(eq=False)
class ArchiveEntry:
    path: Path
    meta: dict
    labels: np.ndarray
    naive_labels: np.ndarray
    embeddings: np.ndarray
    lowres_masks: np.ndarray

    @property
    def image_id(self) -> str:
        return self.meta["image_id"]

    def pixel_field(self, naive: bool = False) -> PixelEmbeddingField:
        labels = self.naive_labels if naive else self.labels
        return PixelEmbeddingField(SegmentationMap(labels, self.meta["K"], self.meta["provenance"]),
                                   self.embeddings.astype(np.float64))

    def image(self) -> np.ndarray:
        return imaging.load_image(self.path / "image.png")


def _load_labels(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im).astype(np.int64)


def load_entry(path) -> ArchiveEntry:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    K = meta["K"]
    h, w = meta["grid_size"]
    bits = np.load(path / "lowres_masks.npy")
    masks = np.unpackbits(bits, axis=1, count=h * w).reshape(K, h, w).astype(bool)
    return ArchiveEntry(path, meta, _load_labels(path / "labels.png"),
                        _load_labels(path / "labels_naive.png"),
                        np.load(path / "embeddings.npy"), masks)


def load_archive(root) -> list[ArchiveEntry]:
    root = Path(root)
    images = root / "images"
    if not images.is_dir():
        raise ValidationError(f"{root} is not a run archive (no images/ directory)")
    return [load_entry(p) for p in sorted(images.iterdir()) if (p / "meta.json").exists()]
