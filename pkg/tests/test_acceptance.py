"""Acceptance suite: one test per criterion.

Every test records a single ``criterion <k> PASS|FAIL`` line; the lines are
printed as they happen and repeated in the pytest terminal summary. The
training budget for the learned criteria is frozen in
``configs/acceptance.json``.
"""

from __future__ import annotations

import shutil
import functools
import time
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from confrank import ablation, checkpoint
from confrank.cli import main as cli_main
from confrank.evaluation import compute_ap, match_detections
from confrank.geometry import DetectionSet, GroundTruthImage, best_match_iou, BoundingBox
from confrank.io import RunConfig, export_corpus, load_corpus
from confrank.net.network import RankerNetwork
from confrank.net.train import predict_refined
from confrank.ranking import (
    ranking_loss_arrays, rank_loss, rank_loss_margin, regression_losses,
)
from confrank.suppression import nms_indices
from confrank.synth import build_corpus

from gradcheck import probe_network, relative_error
from reference import exact_ap, exact_best_match, exhaustive_nms, greedy_match

ROOT = Path(__file__).resolve().parents[1]
CONFIG = RunConfig.load(ROOT / "configs" / "acceptance.json")
REGRESSION = ("l1", "l2", "smooth_l1", "cross_entropy")
RESULTS: list[str] = []


def _report(k: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {k} {'PASS' if ok else 'FAIL'} {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _corpus():
    return build_corpus(
        CONFIG.n_images, CONFIG.scene_spec(), CONFIG.detector_personalities(), CONFIG.seed,
        CONFIG.val_fraction,
    )


@functools.lru_cache(maxsize=None)
def corpus():
    return _corpus()


@functools.lru_cache(maxsize=None)
def trained_row(loss: str, n_pairs: int):
    """``(AblationRow, seconds)`` for one grid point; shared between criteria 5-7."""
    schedule = replace(CONFIG.schedule(), loss=loss, n_pairs=n_pairs)
    start = time.perf_counter()
    row = ablation.train_and_score(corpus(), CONFIG.ranker_config(), schedule, f"{loss} n={n_pairs}")
    return row, time.perf_counter() - start


def _grid_boxes(rng, n, cells=10, max_side=8):
    """Integer-grid boxes: every IoU is an exact ratio of small integers."""
    return np.hstack([rng.integers(0, cells, (n, 2)), rng.integers(1, max_side, (n, 2))]).astype(float)


# -- 1 -------------------------------------------------------------------------


def _central(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_criterion_1_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    scalar = {}

    def probe(name, value_fn, grad, x):
        err = relative_error(grad, _central(value_fn, x))
        scalar[name] = max(scalar.get(name, 0.0), err)

    for _ in range(1000):
        c1, c2, g1, g2 = rng.uniform(0, 1, 4)
        y = int(rng.integers(2))
        lv = rank_loss(c1, c2, y)
        probe("rank", lambda v: rank_loss(v, c2, y).value, lv.gradient[0], c1)
        probe("rank", lambda v: rank_loss(c1, v, y).value, lv.gradient[1], c2)
        lv = rank_loss_margin(c1, c2, g1, g2)
        probe("margin", lambda v: rank_loss_margin(v, c2, g1, g2).value, lv.gradient[0], c1)
        probe("margin", lambda v: rank_loss_margin(c1, v, g1, g2).value, lv.gradient[1], c2)
        # regression losses away from the L1 kink and the cross-entropy clamp
        c, o = rng.uniform(0.001, 0.999, 2)
        if abs(c - o) < 1e-3:
            o = min(c + 0.01, 0.999) if c < 0.5 else c - 0.01
        for kind in REGRESSION:
            g = regression_losses(c, o, kind).gradient[0]
            probe(kind, lambda v: regression_losses(v, o, kind).value, g, c)
    for _ in range(1000):
        m = int(rng.integers(2, 9))
        refined, oracle, raw = rng.uniform(0, 1, (3, m))
        n = int(rng.integers(1, 12))
        margin = bool(rng.integers(2))
        _, grad = ranking_loss_arrays(refined, oracle, raw, n, margin=margin)
        i = int(rng.integers(m))

        def f(v):
            r = refined.copy()
            r[i] = v
            return ranking_loss_arrays(r, oracle, raw, n, margin=margin)[0]

        probe("image_rank", f, grad[i], refined[i])
    net_errors = probe_network(1200, seed=3)
    elapsed = time.perf_counter() - start
    worst_scalar = max(scalar.values())
    ok = worst_scalar < 1e-5 and max(net_errors) < 1e-4 and elapsed < 120
    detail = (
        f"scalar max rel err {worst_scalar:.2e} over {sum(1 for _ in scalar)} losses x 1000+ probes; "
        f"network max rel err {max(net_errors):.2e} over {len(net_errors)} probes; {elapsed:.0f}s"
    )
    _report(1, "gradient correctness", ok, detail)


# -- 2 -------------------------------------------------------------------------


def _monotone_map(rng):
    """Random strictly increasing piecewise-linear map on [0, 1]."""
    knots = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, 4)), [1.0]])
    slopes = rng.uniform(0.1, 10.0, knots.size - 1)
    values = np.concatenate([[rng.uniform(-5, 5)], np.cumsum(slopes * np.diff(knots))])
    values[1:] += values[0]
    return lambda s: np.interp(s, knots, values)


def test_criterion_2_nms_order_invariance():
    rng = np.random.default_rng(22)
    trials = 10_000
    same = 0
    for _ in range(trials):
        n = int(rng.integers(1, 9))
        boxes = np.hstack([rng.uniform(0, 30, (n, 2)), rng.uniform(2, 15, (n, 2))])
        scores = rng.integers(0, 1000, n) / 1000  # ties allowed
        mapped = _monotone_map(rng)(scores)
        assert np.array_equal(np.sign(np.subtract.outer(scores, scores)), np.sign(np.subtract.outer(mapped, mapped)))
        thr = float(rng.choice([0.3, 0.4, 0.5, 0.7]))
        same += set(nms_indices(boxes, scores, thr).tolist()) == set(nms_indices(boxes, mapped, thr).tolist())
    _report(2, "NMS order invariance", same == trials, f"{same}/{trials} instances keep identical box sets")


# -- 3 -------------------------------------------------------------------------


def test_criterion_3_brute_force_equivalence():
    rng = np.random.default_rng(33)
    trials = 10_000
    agree = {"nms": 0, "best_match_iou": 0, "match_detections": 0, "compute_ap": 0}
    for _ in range(trials):
        n = int(rng.integers(0, 7))
        boxes = _grid_boxes(rng, n)
        scores = rng.integers(0, 5, n) / 4
        thr = float(rng.choice([0.3, 0.4, 0.5]))
        agree["nms"] += nms_indices(boxes, scores, thr).tolist() == exhaustive_nms(boxes, scores, thr)

        m = int(rng.integers(0, 7))
        gts = _grid_boxes(rng, m)
        box = _grid_boxes(rng, 1)[0]
        got = best_match_iou(BoundingBox(*box), [BoundingBox(*g) for g in gts])
        agree["best_match_iou"] += got == float(exact_best_match(box, gts))

        m = int(rng.integers(1, 7))
        gts = _grid_boxes(rng, m)
        valid = rng.random(m) < 0.75
        valid[int(rng.integers(m))] = True
        ds = DetectionSet("img", 20, 20, boxes, scores)
        gt = GroundTruthImage("img", 20, 20, gts)
        outcomes = match_detections(ds, gt, 0.5, valid_gt=valid)
        ref = greedy_match(boxes, scores, gts, 0.5, valid)
        agree["match_detections"] += [(o.index, o.matched_gt, o.ignored) for o in outcomes] == ref

        scored = [(Fraction(str(scores[i])), j is not None) for i, j, ignored in ref if not ignored]
        expected = exact_ap(scored, int(valid.sum())) if scored else Fraction(0)
        agree["compute_ap"] += abs(compute_ap(outcomes, int(valid.sum())).ap - float(expected)) <= 1e-12
    ok = all(v == trials for v in agree.values())
    _report(3, "brute-force equivalence", ok, ", ".join(f"{k} {v}/{trials}" for k, v in agree.items()))


# -- 4 -------------------------------------------------------------------------


def test_criterion_4_oracle_gap():
    start = time.perf_counter()
    first = _corpus()
    raw, oracle = ablation.baseline_rows(first)
    again = ablation.baseline_rows(_corpus())
    deterministic = [(r.ap, r.ap_by_detector) for r in again] == [(raw.ap, raw.ap_by_detector), (oracle.ap, oracle.ap_by_detector)]
    elapsed = time.perf_counter() - start
    ok = oracle.ap >= 0.99 and raw.ap <= oracle.ap - 0.20 and deterministic and elapsed < 60
    detail = (
        f"AP(oracle) {oracle.ap:.4f}, AP(raw) {raw.ap:.4f} (gap {oracle.ap - raw.ap:.4f}), "
        f"per detector raw {raw.ap_by_detector}; deterministic={deterministic}; {elapsed:.0f}s"
    )
    _report(4, "oracle gap", ok, detail)


# -- 5 to 7 --------------------------------------------------------------------


def test_criterion_5_training_closes_gap():
    raw, oracle = ablation.baseline_rows(corpus())
    row, seconds = trained_row("rank", 10)
    target = raw.ap + 0.5 * (oracle.ap - raw.ap)
    ok = row.ap >= target and seconds < 15 * 60
    detail = (
        f"AP(refined) {row.ap:.4f} vs target {target:.4f} (raw {raw.ap:.4f}, oracle {oracle.ap:.4f}); "
        f"{CONFIG.iterations} iterations in {seconds:.0f}s"
    )
    _report(5, "training closes the gap", ok, detail)


def test_criterion_6_loss_ablation():
    rank, _ = trained_row("rank", CONFIG.n_pairs)
    rows = [rank] + [trained_row(loss, CONFIG.n_pairs)[0] for loss in REGRESSION]
    print(ablation.format_table("loss ablation", rows))
    losers = [r.label for r in rows[1:] if not (rank.ap > r.ap and rank.tau > r.tau)]
    cells = "; ".join(f"{r.loss} AP {r.ap:.4f} tau {r.tau:.4f}" for r in rows)
    detail = cells + (f"; rank not strictly ahead of: {', '.join(losers)}" if losers else "")
    _report(6, "loss ablation direction", not losers, detail)


def test_criterion_7_pair_sweep():
    rows = {n: trained_row("rank", n)[0] for n in ablation.PAIR_GRID}
    print(ablation.format_table("pair-count sweep", list(rows.values())))
    complete = list(rows) == [1, 2, 10, 100] and all(np.isfinite([r.ap, r.tau]).all() for r in rows.values())
    dominated = rows[1].ap > rows[10].ap and rows[100].ap > rows[10].ap
    cells = "; ".join(f"n={n} AP {r.ap:.4f} tau {r.tau:.4f}" for n, r in rows.items())
    _report(7, "pair-count sweep direction", complete and not dominated, cells)


# -- 8 -------------------------------------------------------------------------


def test_criterion_8_identity_at_init():
    c = corpus()
    net = RankerNetwork(CONFIG.ranker_config(), CONFIG.seed)
    changed = 0
    total = 0
    for p in c.personalities:
        dets = c.detection_sets("validation", p.name)
        refined = predict_refined(net, [(img.features, d) for img, d in zip(c.validation, dets)])
        for d, r in zip(dets, refined):
            live = ~np.isnan(r)
            changed += int(np.sum(r[live] != d.confidence[live]))
            total += int(live.sum())
    before = ablation.validation_scores(net, c)
    raw = ablation.validation_scores(None, c, "raw")
    same_ap = before[0] == raw[0]
    ok = changed == 0 and same_ap
    _report(8, "identity at initialization", ok, f"{changed}/{total} confidences changed; AP before training {before[0]} vs raw {raw[0]}")


# -- 9 -------------------------------------------------------------------------

PIPELINE = ["n_images=40", "iterations=20", "capacity_n=32", "batch_size=8", "log_every=5"]


def _pipeline(root: Path) -> list[Path]:
    sets = [a for s in PIPELINE for a in ("--set", s)]
    corpus_dir = root / "corpus"
    steps = [
        ["synth", "--out", str(corpus_dir)],
        ["train", "--corpus", str(corpus_dir), "--out", str(root / "model.ckpt"), "--history", str(root / "history.txt")],
        ["rerank", "--checkpoint", str(root / "model.ckpt"), "--dets", str(corpus_dir / "validation" / "dets_sharp.txt"),
         "--features", str(corpus_dir / "validation"), "--out", str(root / "refined.txt")],
        ["eval", "--annotations", str(corpus_dir / "validation" / "annotations.txt"), "--dets", str(root / "refined.txt"),
         "--out", str(root / "eval")],
    ]
    for step in steps:
        assert cli_main(step + sets) == 0, step
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def _snapshot(root: Path) -> dict:
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_9_determinism_and_round_trip(tmp_path):
    # same command lines in the same place, twice; reports record input paths
    work = tmp_path / "run"
    _pipeline(work)
    first = _snapshot(work)
    shutil.rmtree(work)
    files = _pipeline(work)
    second = _snapshot(work)
    identical = first == second
    # export/parse round trip of a full corpus and a trained checkpoint
    original = build_corpus(60, seed=9)
    export_corpus(original, tmp_path / "rt")
    back = load_corpus(tmp_path / "rt")
    lossless = all(
        a.gt == b.gt and a.features.tobytes() == b.features.tobytes()
        and all(b.detections[k] == v for k, v in a.detections.items())
        for split in ("train", "validation")
        for a, b in zip(getattr(original, split), getattr(back, split))
    )
    net, extra = checkpoint.load(work / "model.ckpt")
    lossless &= checkpoint.dumps(net, extra) == (work / "model.ckpt").read_bytes()
    detail = f"{len(files)} pipeline output files byte-identical={identical}; round trips lossless={lossless}"
    _report(9, "determinism and round trip", identical and lossless, detail)
