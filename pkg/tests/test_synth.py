import math

import numpy as np
import pytest
from scipy.stats import chisquare

from confrank.evaluation import evaluate, mean_kendall_tau
from confrank.geometry import GroundTruthImage
from confrank.oracle import assign_oracle, oracle_rescore
from confrank.synth import (
    DEFAULT_PERSONALITIES, DetectorPersonality, SceneSpec, build_corpus, coverage, generate_scene,
    quantize_coords, quantize_scores, run_personality,
)
from confrank.validation import InvalidInputError

PERFECT = DetectorPersonality(name="perfect")


def test_scene_is_deterministic():
    a = generate_scene(SceneSpec(), 7, "x")
    b = generate_scene(SceneSpec(), 7, "x")
    assert a.gt == b.gt
    assert a.features.tobytes() == b.features.tobytes()
    assert not np.array_equal(generate_scene(SceneSpec(), 8).gt.boxes, a.gt.boxes) or len(a.gt) == 0


def test_zero_gt_scene_is_blank():
    scene = generate_scene(SceneSpec(n_gt=(0, 0)), 1)
    assert len(scene.gt) == 0
    assert np.all(scene.features == 0)


def test_infeasible_spec_rejected():
    with pytest.raises(InvalidInputError):
        SceneSpec(image_width=50, image_height=50, height_range=(10, 80))
    with pytest.raises(InvalidInputError):
        SceneSpec(n_gt=(3, 1))


def test_height_histogram_matches_log_uniform():
    spec = SceneSpec()
    heights = np.concatenate([generate_scene(spec, s).gt.boxes[:, 3] for s in range(1000)])
    lo, hi = np.log(spec.height_range)
    edges = np.exp(np.linspace(lo, hi, 11))
    observed, _ = np.histogram(heights, bins=edges)
    expected = np.full(10, heights.size / 10)
    # coordinates are rounded to 0.01 px; the effect on bin counts is negligible
    assert chisquare(observed, expected).pvalue > 0.01


def test_difficulty_follows_height_terciles():
    spec = SceneSpec()
    e1, e2 = spec.difficulty_edges()
    for s in range(50):
        gt = generate_scene(spec, s).gt
        for h, tag in zip(gt.boxes[:, 3], gt.difficulty):
            assert tag == ("easy" if h >= e2 else "medium" if h >= e1 else "hard")


def test_identity_personality_reproduces_gt():
    gt = generate_scene(SceneSpec(), 3).gt
    ds = run_personality(gt, PERFECT, 0)
    assert sorted(map(tuple, ds.boxes)) == sorted(map(tuple, gt.boxes))
    assert np.all(ds.confidence == 1.0)
    assert ds.oracle is None


def test_duplicate_count():
    gt = GroundTruthImage("a", 256, 256, [[10, 10, 30, 30], [100, 100, 40, 40]])
    p = DetectorPersonality(name="d", duplicates=(3, 3), loc_noise=0.05, fp_rate=2.0)
    for seed in range(20):
        ds = run_personality(gt, p, seed)
        fp = len(ds) - 3 * len(gt)
        assert fp >= 0
    p0 = DetectorPersonality(name="d", duplicates=(3, 3), loc_noise=0.05)
    assert len(run_personality(gt, p0, 0)) == 6


def test_inversion_gives_negative_tau():
    p = DetectorPersonality(name="inv", loc_noise=0.15, duplicates=(3, 5), inversion=1.0)
    dets = []
    for s in range(100):
        scene = generate_scene(SceneSpec(), s, f"i{s}")
        dets.append(assign_oracle(run_personality(scene.gt, p, s), scene.gt))
    assert mean_kendall_tau(dets, "confidence") < -0.5


def test_outputs_are_quantized_and_sorted():
    scene = generate_scene(SceneSpec(), 11)
    ds = run_personality(scene.gt, DEFAULT_PERSONALITIES[0], 11, scene.distractors)
    np.testing.assert_array_equal(ds.boxes, quantize_coords(ds.boxes))
    np.testing.assert_array_equal(ds.confidence, quantize_scores(ds.confidence))
    assert np.all(np.diff(ds.confidence) <= 0)
    assert ds.boxes[:, 0].min() >= 0 and (ds.boxes[:, 0] + ds.boxes[:, 2]).max() <= 256 + 1e-9


def test_corpus_split_and_determinism():
    a = build_corpus(100, seed=2)
    assert len(a.train) == 80 and len(a.validation) == 20
    ids = [i.image_id for i in a.train] + [i.image_id for i in a.validation]
    assert len(set(ids)) == 100
    b = build_corpus(100, seed=2)
    for x, y in zip(a.train + a.validation, b.train + b.validation):
        assert x.gt == y.gt
        assert all(x.detections[k] == y.detections[k] for k in x.detections)
    with pytest.raises(InvalidInputError):
        build_corpus(10, personalities=())
    with pytest.raises(InvalidInputError):
        build_corpus(10, personalities=(PERFECT, PERFECT))


def test_perfect_personality_has_oracle_ap_one():
    c = build_corpus(50, personalities=(PERFECT,), seed=1)
    gts = c.ground_truth("validation")
    dets = c.detection_sets("validation", "perfect")
    rescored = [oracle_rescore(d, g) for d, g in zip(dets, gts)]
    assert evaluate(rescored, gts, "refined").ap_hard == 1.0


def test_default_personalities_cover_most_faces():
    c = build_corpus(200, seed=0)
    for p in c.personalities:
        assert coverage(c.train + c.validation, p.name) >= 0.87


def test_quantizers():
    assert quantize_coords([1.005, 2.344])[1] == 2.34
    assert quantize_scores([0.1234567])[0] == 0.123457
    assert math.isnan(coverage([], "x"))


def test_drift_shifts_whole_images():
    gt = GroundTruthImage("a", 256, 256, [[10, 10, 30, 30], [100, 100, 40, 40]])
    p = DetectorPersonality(name="d", duplicates=(2, 2), loc_noise=0.1, bias=0.5, scale=0.0, drift=0.1)
    per_image = [np.unique(run_personality(gt, p, s).confidence) for s in range(5)]
    assert all(u.size == 1 for u in per_image)
    assert len({float(u[0]) for u in per_image}) == 5
