import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import exhaustive_matching_miou, miou_loop, openvocab_fixture
from modseg.correspondence import SegmentationMap
from modseg.errors import TextEmbeddingError, UndefinedMetricError, ValidationError
from modseg.evaluation import (DEFAULT_TEMPLATES, ConfusionMatrix, TextClassSpec, classify_masks_openvocab,
                               classify_pixels_openvocab, class_iou, confusion, hungarian_match, miou,
                               text_embeddings)


def test_confusion_diagonal():
    gt = np.array([[0, 1], [1, 0]])
    np.testing.assert_array_equal(confusion(gt, gt, 2, 2).counts, [[2, 0], [0, 2]])


def test_confusion_all_ignored_warns():
    with pytest.warns(RuntimeWarning):
        conf = confusion(np.zeros((2, 2), int), np.full((2, 2), 255), 2, 2)
    assert conf.total == 0 and conf.ignored == 4


def test_confusion_shape_mismatch():
    with pytest.raises(ValidationError):
        confusion(np.zeros((2, 2), int), np.zeros((2, 3), int))


def test_confusion_matches_loop(rng):
    pred, gt = rng.integers(0, 3, (8, 8)), rng.integers(0, 4, (8, 8))
    gt[0, :3] = 255
    expect = np.zeros((3, 4), int)
    for p, g in zip(pred.ravel(), gt.ravel()):
        if g != 255:
            expect[p, g] += 1
    conf = confusion(pred, gt, 3, 4)
    np.testing.assert_array_equal(conf.counts, expect)
    assert conf.total + conf.ignored == 64


def test_confusion_merge_associative(rng):
    a, b, c = (ConfusionMatrix(rng.integers(0, 9, (3, 3))) for _ in range(3))
    np.testing.assert_array_equal(((a + b) + c).counts, (a + (b + c)).counts)


def test_hand_example():
    gt = np.array([[0, 0], [1, 1]])
    pred = np.array([[0, 1], [1, 1]])
    assert miou(confusion(pred, gt, 2, 2), [0, 1]) == pytest.approx(7 / 12, abs=1e-12)


def test_perfect_is_one():
    gt = np.array([[0, 1, 2]])
    assert miou(confusion(gt, gt, 3, 3)) == 1.0


def test_undefined_metric():
    with pytest.raises(UndefinedMetricError):
        miou(ConfusionMatrix(np.zeros((2, 2), int)))


def test_zero_union_class_excluded():
    conf = confusion(np.array([[0, 0]]), np.array([[0, 0]]), 3, 3)
    assert np.isnan(class_iou(conf)[1:]).all()
    assert miou(conf) == 1.0


def test_assignment_must_be_injective():
    with pytest.raises(ValidationError):
        class_iou(ConfusionMatrix(np.eye(2, dtype=int)), [0, 0])


@pytest.mark.parametrize("seed", range(10))
def test_miou_matches_loop(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.integers(0, 3, (6, 6)), rng.integers(0, 3, (6, 6))
    a = rng.permutation(3)
    assert miou(confusion(pred, gt, 3, 3), a) == pytest.approx(miou_loop(pred, gt, a, 3), abs=1e-12)


def test_hungarian_diagonal_and_antidiagonal():
    np.testing.assert_array_equal(hungarian_match(ConfusionMatrix(np.eye(3, dtype=int) * 5)), [0, 1, 2])
    np.testing.assert_array_equal(hungarian_match(ConfusionMatrix(np.eye(3, dtype=int)[::-1] * 5)), [2, 1, 0])


confusions = st.tuples(st.integers(1, 4), st.integers(1, 4)).flatmap(
    lambda s: st.lists(st.integers(0, 6), min_size=s[0] * s[1], max_size=s[0] * s[1]).map(
        lambda v: np.array(v).reshape(s)))


@settings(max_examples=60)
@given(counts=confusions)
def test_hungarian_optimal(counts):
    conf = ConfusionMatrix(counts)
    if conf.total == 0:
        return
    assert miou(conf, hungarian_match(conf)) == pytest.approx(exhaustive_matching_miou(counts), abs=1e-12)


@given(counts=confusions, data=st.data())
def test_label_permutation_invariance(counts, data):
    conf = ConfusionMatrix(counts)
    if conf.total == 0:
        return
    perm = data.draw(st.permutations(range(counts.shape[0])))
    shuffled = ConfusionMatrix(counts[list(perm)])
    assert miou(shuffled, hungarian_match(shuffled)) == pytest.approx(miou(conf, hungarian_match(conf)))


@given(counts=confusions)
def test_miou_bounds(counts):
    conf = ConfusionMatrix(counts)
    if conf.total == 0:
        return
    value = miou(conf, hungarian_match(conf))
    assert 0.0 <= value <= 1.0
    a = hungarian_match(conf)
    off = counts.copy()
    off[a >= 0, a[a >= 0]] = 0
    assert (value == 1.0) == (off.sum() == 0 and (a >= 0).sum() == (counts.sum(0) > 0).sum() and
                              all(counts[p].sum() == counts[p, g] for p, g in enumerate(a) if g >= 0))


class TestText:
    def test_templates_verbatim(self):
        assert len(DEFAULT_TEMPLATES) == 7
        assert DEFAULT_TEMPLATES[0] == "itap of a {}."
        assert "a bad photo of a {}." in DEFAULT_TEMPLATES

    @pytest.mark.parametrize("bad", [(), ("no slot",), ("{} and {}",)])
    def test_template_validation(self, bad):
        with pytest.raises(ValidationError):
            TextClassSpec(("cat",), bad)

    def test_single_template(self):
        vec = np.array([3.0, 4.0])
        out = text_embeddings(TextClassSpec(("cat",), ("a {}",)), lambda prompts: [vec])
        np.testing.assert_allclose(out[0], vec / 5)

    def test_duplicate_templates_idempotent(self):
        def enc(prompts):
            return [np.array([len(p), 1.0]) for p in prompts]

        one = text_embeddings(TextClassSpec(("dog",), ("a {}",)), enc)
        dup = text_embeddings(TextClassSpec(("dog",), ("a {}", "a {}")), enc)
        np.testing.assert_allclose(one, dup)

    def test_failure_names_class(self):
        def enc(prompts):
            if "zebra" in prompts[0]:
                raise RuntimeError("offline")
            return np.ones((len(prompts), 2))

        with pytest.raises(TextEmbeddingError, match="zebra"):
            text_embeddings(TextClassSpec(("cat", "zebra")), enc)


class TestOpenVocab:
    def test_mean_equal_to_class_vector(self):
        masks = SegmentationMap(np.zeros((2, 2), int), 1)
        vecs = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = classify_masks_openvocab(masks, np.tile(vecs[1], (2, 2, 1)), vecs)
        assert (out.labels == 1).all()

    def test_two_orthogonal_masks(self):
        masks = SegmentationMap(np.array([[0, 1]]), 2)
        vecs = np.eye(2)
        emb = np.array([[[0.0, 2.0], [3.0, 0.0]]])
        np.testing.assert_array_equal(classify_masks_openvocab(masks, emb, vecs).labels, [[1, 0]])

    def test_empty_field(self):
        with pytest.raises(ValidationError):
            classify_masks_openvocab(SegmentationMap(np.zeros((0, 0), int), 1), np.zeros((0, 0, 2)), np.eye(2))

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            classify_masks_openvocab(SegmentationMap(np.zeros((2, 2), int), 1), np.ones((2, 2, 3)), np.eye(2))

    @given(seed=st.integers(0, 2**16), K=st.integers(1, 8))
    def test_mask_constancy(self, seed, K):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, K, (7, 7))
        out = classify_masks_openvocab(SegmentationMap(labels, K), rng.normal(size=(7, 7, 4)),
                                       rng.normal(size=(3, 4))).labels
        for k in range(K):
            assert len(np.unique(out[labels == k])) <= 1

    def test_fixture_masks_beat_pixels(self):
        gt, masks, field, vectors = openvocab_fixture(0)
        C = len(vectors)
        by_mask = classify_masks_openvocab(SegmentationMap(masks, int(masks.max()) + 1), field, vectors)
        by_pixel = classify_pixels_openvocab(field, vectors)
        assert miou(confusion(by_mask, gt, C, C)) > miou(confusion(by_pixel, gt, C, C))
