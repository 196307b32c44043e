"""Image sizing, label-image files and color palettes."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError

TARGET_PIXELS = 512 * 512
MULTIPLE = 64


def resize_rule(H0: int, W0: int, target: int = TARGET_PIXELS, multiple: int = MULTIPLE) -> tuple[int, int]:
    """Scale to about ``target`` pixels at the same aspect ratio, then round each side up to ``multiple``."""
    if H0 < 1 or W0 < 1:
        raise ValidationError(f"image size must be positive, got {H0}x{W0}")
    s = math.sqrt(target / (H0 * W0))
    # The epsilon keeps exact multiples (e.g. 1024 * 0.5 / 64 = 8) from rounding up a step.
    return tuple(multiple * max(1, math.ceil(n * s / multiple - 1e-9)) for n in (H0, W0))


def load_image(path) -> np.ndarray:
    """RGB float image in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def resize_image(image: np.ndarray, H: int, W: int) -> np.ndarray:
    if image.shape[:2] == (H, W):
        return image
    im = Image.fromarray(to_uint8(image)).resize((W, H), Image.BILINEAR)
    return np.asarray(im, dtype=np.float64) / 255.0


def resize_nearest(labels: np.ndarray, H: int, W: int) -> np.ndarray:
    """Nearest-neighbour resize of a label grid using pixel-center alignment."""
    h, w = labels.shape
    rows = np.minimum(((np.arange(H) + 0.5) * h / H).astype(int), h - 1)
    cols = np.minimum(((np.arange(W) + 0.5) * w / W).astype(int), w - 1)
    return labels[rows[:, None], cols[None, :]]


def palette(seed: int, n: int = 256) -> np.ndarray:
    """Seeded ``n x 3`` uint8 label palette, identical across reruns."""
    rng = np.random.default_rng([seed, 0x5EED])
    return rng.integers(30, 256, size=(n, 3), dtype=np.uint8)


def save_label_png(path, labels: np.ndarray, colors: np.ndarray | None = None) -> None:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValidationError("indexed PNG labels must lie in [0, 255]")
    im = Image.fromarray(labels.astype(np.uint8), mode="P")
    # Without an explicit palette Pillow may remap indices on save.
    im.putpalette(np.asarray(palette(0) if colors is None else colors, dtype=np.uint8).ravel().tolist())
    im.save(path, optimize=False)


def load_label_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("P", "L", "I", "I;16"):
            raise ValidationError(f"{path}: expected an indexed or grayscale label image, got mode {im.mode}")
        return np.asarray(im).astype(np.int64)


def save_rgb_png(path, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image) if image.dtype != np.uint8 else image).save(path, optimize=False)


def overlay(image: np.ndarray, labels: np.ndarray, colors: np.ndarray, alpha: float = 0.55) -> np.ndarray:
    rgb = np.asarray(image, dtype=np.float64)
    if rgb.max() > 1.0:
        rgb = rgb / 255.0
    return (1 - alpha) * rgb + alpha * colors[labels].astype(np.float64) / 255.0


def is_image_path(path) -> bool:
    return Path(path).suffix.lower() in {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}
