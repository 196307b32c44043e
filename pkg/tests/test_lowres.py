import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from helpers import best_permutation_accuracy, exhaustive_kmeans_sse
from modseg.backend import FEATURE_SITE
from modseg.backend.scenes import make_scene
from modseg.errors import InvalidKError, ValidationError
from modseg.lowres import FeatureMap, LowResSegmentation, flat_to_mask, kmeans, kmeans_cluster, mask_to_flat


def grid(points, h, w):
    return FeatureMap(np.asarray(points, dtype=float).reshape(h, w, -1))


def test_single_cluster_is_global_mean(rng):
    X = rng.normal(size=(3, 4, 5))
    seg = kmeans_cluster(FeatureMap(X), 1)
    assert seg.masks.all()
    np.testing.assert_allclose(seg.centroids[0], X.reshape(-1, 5).mean(0))


def test_four_cell_example():
    seg = kmeans_cluster(grid([(0, 0), (0.1, 0), (10, 0), (10.1, 0)], 2, 2), 2)
    labels = seg.label_grid().ravel()
    assert labels[0] == labels[1] != labels[2] == labels[3]
    assert seg.inertia == pytest.approx(0.01, abs=1e-12)


def test_k_too_large():
    with pytest.raises(InvalidKError):
        kmeans_cluster(FeatureMap(np.zeros((2, 2, 1))), 5)


def test_non_finite():
    with pytest.raises(ValidationError):
        FeatureMap(np.array([[[np.inf]]]))


def test_duplicate_points_still_give_nonempty_masks():
    seg = kmeans_cluster(FeatureMap(np.zeros((3, 3, 2))), 4)
    assert all(m.any() for m in seg.masks)


features = st.integers(1, 6).flatmap(
    lambda h: st.integers(1, 6).flatmap(
        lambda w: arrays(np.float64, (h, w, 3), elements=st.floats(-5, 5, allow_nan=False, width=32))))


@given(X=features, data=st.data())
def test_partition_invariant(X, data):
    K = data.draw(st.integers(1, X.shape[0] * X.shape[1]))
    seg = kmeans_cluster(FeatureMap(X), K, seed=data.draw(st.integers(0, 99)))
    assert seg.masks.shape == (K,) + X.shape[:2]
    np.testing.assert_array_equal(seg.masks.sum(0), 1)
    assert all(m.any() for m in seg.masks)


@given(X=features, seed=st.integers(0, 99))
def test_inertia_non_increasing(X, seed):
    K = min(3, X.shape[0] * X.shape[1])
    _, _, inertia, history = kmeans(X.reshape(-1, 3), K, seed)
    assert all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(history, history[1:]))
    assert inertia == history[-1]


@given(X=features, seed=st.integers(0, 99))
def test_seed_stability(X, seed):
    K = min(2, X.shape[0] * X.shape[1])
    a = kmeans_cluster(FeatureMap(X), K, seed)
    b = kmeans_cluster(FeatureMap(X), K, seed)
    np.testing.assert_array_equal(a.masks, b.masks)


@given(mask=st.integers(1, 8).flatmap(lambda h: arrays(bool, (h, h + 1))))
def test_flatten_round_trip(mask):
    flat = mask_to_flat(mask)
    assert flat.shape == (mask.size, 1)
    np.testing.assert_array_equal(flat_to_mask(flat, mask.shape), mask)


def test_flatten_is_row_major():
    np.testing.assert_array_equal(mask_to_flat(np.array([[1, 0], [0, 0]])).ravel(), [1, 0, 0, 0])


@settings(max_examples=10)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 8))
def test_recovers_block_labels(seed, n):
    s = make_scene(seed, n_labels=n)
    be = s.backend()
    f = be.extract_features(be.invert(s.render()), FEATURE_SITE, 1)
    seg = kmeans_cluster(FeatureMap(f), n, seed)
    assert best_permutation_accuracy(seg.label_grid(), s.block_labels()) == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(7, 2))
    _, _, inertia, _ = kmeans(X, 3, seed, n_init=10)
    assert inertia == pytest.approx(exhaustive_kmeans_sse(X, 3), abs=1e-9)


def test_weighted_equals_repeated_points(rng):
    X = rng.normal(size=(6, 2))
    w = np.array([1, 2, 3, 1, 2, 1])
    _, _, a, _ = kmeans(X, 2, 0, weights=w.astype(float), n_init=10)
    _, _, b, _ = kmeans(np.repeat(X, w, axis=0), 2, 0, n_init=10)
    assert a == pytest.approx(b)


def test_from_labels():
    seg = LowResSegmentation.from_labels(np.array([[0, 1], [2, 2]]))
    assert seg.K == 3
    np.testing.assert_array_equal(seg.label_grid(), [[0, 1], [2, 2]])
