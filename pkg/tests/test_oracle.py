import numpy as np
import pytest
from hypothesis import given, strategies as st

from confrank.evaluation import evaluate
from confrank.geometry import DetectionSet, GroundTruthImage
from confrank.oracle import assign_oracle, oracle_rescore
from confrank.validation import InvalidInputError

from conftest import random_boxes
from reference import exact_best_match


def _dets(boxes, image_id="img"):
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    return DetectionSet(image_id, 100, 100, boxes, np.linspace(0.9, 0.1, len(boxes)))


def test_identical_box_scores_one():
    gt = GroundTruthImage("img", 100, 100, [[5, 5, 10, 10], [40, 40, 20, 30]])
    ds = assign_oracle(_dets([[40, 40, 20, 30]]), gt)
    assert ds.oracle[0] == 1.0


def test_pixel_grid_example():
    gt = GroundTruthImage("img", 100, 100, [[1, 0, 2, 2]])
    ds = assign_oracle(_dets([[0, 0, 2, 2]]), gt)
    assert ds.oracle[0] == pytest.approx(1 / 3, abs=1e-15)


def test_empty_gt_gives_zero():
    gt = GroundTruthImage("img", 100, 100, np.zeros((0, 4)))
    ds = assign_oracle(_dets([[0, 0, 2, 2], [3, 3, 4, 4]]), gt)
    np.testing.assert_array_equal(ds.oracle, 0.0)


def test_raw_confidence_untouched():
    gt = GroundTruthImage("img", 100, 100, [[0, 0, 5, 5]])
    ds = _dets([[0, 0, 5, 5], [50, 50, 5, 5]])
    out = assign_oracle(ds, gt)
    np.testing.assert_array_equal(out.confidence, ds.confidence)
    assert out.refined is None


def test_image_mismatch_rejected():
    gt = GroundTruthImage("other", 100, 100, [[0, 0, 5, 5]])
    with pytest.raises(InvalidInputError):
        assign_oracle(_dets([[0, 0, 5, 5]]), gt)
    with pytest.raises(InvalidInputError):
        oracle_rescore(_dets([[0, 0, 5, 5]]), gt)


def test_rescore_perfect_and_background():
    gt = GroundTruthImage("img", 100, 100, [[0, 0, 5, 5], [20, 20, 5, 5]])
    perfect = oracle_rescore(_dets(gt.boxes), gt)
    np.testing.assert_array_equal(perfect.refined, 1.0)
    bg = oracle_rescore(_dets([[60, 60, 5, 5], [80, 10, 3, 3]]), gt)
    np.testing.assert_array_equal(bg.refined, 0.0)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(0, 5))
def test_rescore_matches_brute_force(seed, n_det, n_gt):
    rng = np.random.default_rng(seed)
    gt = GroundTruthImage("img", 100, 100, np.round(random_boxes(rng, n_gt)))
    ds = oracle_rescore(_dets(np.round(random_boxes(rng, n_det))), gt)
    expected = [float(exact_best_match(b, gt.boxes)) for b in ds.boxes]
    np.testing.assert_allclose(ds.refined, expected, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(ds.refined, ds.oracle)


@given(st.integers(0, 2**32 - 1))
def test_invariant_to_gt_permutation_and_idempotent(seed):
    rng = np.random.default_rng(seed)
    boxes = random_boxes(rng, 5)
    ds = _dets(random_boxes(rng, 7))
    gt = GroundTruthImage("img", 100, 100, boxes)
    shuffled = GroundTruthImage("img", 100, 100, boxes[rng.permutation(5)])
    once = oracle_rescore(ds, gt)
    np.testing.assert_array_equal(once.oracle, assign_oracle(ds, shuffled).oracle)
    assert oracle_rescore(once, gt) == once


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.sampled_from([0.3, 0.5, 0.7]))
def test_separable_sets_give_perfect_ap(seed, n_gt, t):
    # GTs sit in separate grid cells; one positive per GT, spurious boxes below t
    rng = np.random.default_rng(seed)
    gts, boxes = [], []
    for g in range(n_gt):
        x0 = 50.0 * (g % 2) + 10
        y0 = 50.0 * (g // 2) + 10
        box = np.array([x0, y0, 20.0, 20.0])
        gts.append(box)
        shrink = rng.uniform(np.sqrt(t), 1.0)
        boxes.append([x0, y0, 20 * shrink, 20 * shrink])  # IoU = shrink^2 >= t
        frac = rng.uniform(0.0, t * 0.9)
        boxes.append([x0, y0, 20.0 * frac, 20.0])  # IoU = frac < t
    gt = GroundTruthImage("img", 100, 100, gts)
    ds = oracle_rescore(_dets(boxes), gt)
    report = evaluate([ds], [gt], "refined", nms_iou=0.4, match_iou=t)
    assert report.ap_hard == 1.0
