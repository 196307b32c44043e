import numpy as np
import pytest
from hypothesis import given, strategies as st

from modseg.errors import ValidationError
from modseg.imaging import (load_label_png, overlay, palette, resize_image, resize_nearest, resize_rule,
                            save_label_png)


@pytest.mark.parametrize("size, expected", [((512, 512), (512, 512)), ((1024, 1024), (512, 512)),
                                            ((480, 640), (448, 640))])
def test_resize_examples(size, expected):
    assert resize_rule(*size) == expected


@given(st.integers(1, 5000), st.integers(1, 5000))
def test_resize_multiples_of_64(H, W):
    h, w = resize_rule(H, W)
    assert h % 64 == 0 and w % 64 == 0 and h >= 64 and w >= 64


@given(st.integers(16, 4000), st.integers(16, 4000))
def test_resize_rounds_up(H, W):
    # Before rounding the scaled image holds 512^2 pixels, so rounding up can only add.
    h, w = resize_rule(H, W)
    s = (512 * 512 / (H * W)) ** 0.5
    assert h >= H * s - 1e-6 and w >= W * s - 1e-6
    assert h < H * s + 64 and w < W * s + 64


def test_resize_rule_fixed_point():
    assert resize_rule(*resize_rule(512, 512)) == (512, 512)


def test_resize_rule_rejects_empty():
    with pytest.raises(ValidationError):
        resize_rule(0, 10)


@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 4))
def test_nearest_upscale_by_integer_factor(h, w, f):
    labels = np.arange(h * w).reshape(h, w)
    np.testing.assert_array_equal(resize_nearest(labels, h * f, w * f), np.kron(labels, np.ones((f, f), int)))


def test_resize_image_identity():
    img = np.random.default_rng(0).random((64, 64, 3))
    assert resize_image(img, 64, 64) is img


def test_palette_stable_and_seeded():
    np.testing.assert_array_equal(palette(3), palette(3))
    assert not np.array_equal(palette(3), palette(4))


def test_label_png_round_trip(tmp_path):
    labels = np.random.default_rng(1).integers(0, 30, (17, 23))
    save_label_png(tmp_path / "l.png", labels, palette(0))
    np.testing.assert_array_equal(load_label_png(tmp_path / "l.png"), labels)


def test_label_png_range(tmp_path):
    with pytest.raises(ValidationError):
        save_label_png(tmp_path / "l.png", np.array([[256]]))


def test_overlay_two_colors():
    labels = np.array([[0, 1], [1, 0]])
    out = overlay(np.zeros((2, 2, 3)), labels, palette(0))
    assert len(np.unique(out.reshape(-1, 3), axis=0)) == 2
