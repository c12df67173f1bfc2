"""Average-precision evaluation in the WiderFace style.

Detections are matched greedily in descending score order; AP is the area
under the all-points interpolated precision envelope. Difficulty buckets are
cumulative: ``easy`` uses easy GT only, ``medium`` easy+medium, ``hard`` all.
Detections that only match GT outside the bucket are ignored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import DIFFICULTIES, DetectionSet, GroundTruthImage, descending_order, iou_matrix
from .suppression import nms
from .validation import InvalidInputError, UndefinedMetricError

BUCKET_MEMBERS = {
    "easy": ("easy",),
    "medium": ("easy", "medium"),
    "hard": ("easy", "medium", "hard"),
}


@dataclass(frozen=True)
class MatchOutcome:
    index: int
    score: float
    matched: bool
    matched_gt: int | None
    image_id: str
    ignored: bool = False


@dataclass(frozen=True)
class PRCurve:
    """Precision/recall after each distinct score threshold (descending)."""

    thresholds: np.ndarray
    recall: np.ndarray
    precision: np.ndarray
    ap: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


@dataclass(frozen=True)
class ApReport:
    ap_easy: float | None
    ap_medium: float | None
    ap_hard: float | None
    curves: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"easy": self.ap_easy, "medium": self.ap_medium, "hard": self.ap_hard}


def match_detections(
    ds: DetectionSet,
    gt: GroundTruthImage,
    iou_threshold: float = 0.5,
    score: str = "confidence",
    valid_gt=None,
) -> list[MatchOutcome]:
    """Greedy matching of one image's detections against its GT.

    ``valid_gt`` optionally masks which GT boxes count; a detection that only
    reaches a masked-out GT is marked ignored.
    """
    if len(ds) == 0:
        return []
    scores = ds.scores(score)
    valid = np.ones(len(gt), dtype=bool) if valid_gt is None else np.asarray(valid_gt, dtype=bool)
    overlaps = iou_matrix(ds.boxes, gt.boxes)
    taken = np.zeros(len(gt), dtype=bool)
    out = []
    for idx in descending_order(scores):
        row = overlaps[idx]
        free = valid & ~taken & (row >= iou_threshold)
        if free.any():
            j = int(np.argmax(np.where(free, row, -1.0)))
            taken[j] = True
            out.append(MatchOutcome(int(idx), float(scores[idx]), True, j, ds.image_id))
            continue
        ignored = bool(np.any(~valid & (row >= iou_threshold)))
        out.append(MatchOutcome(int(idx), float(scores[idx]), False, None, ds.image_id, ignored))
    return out


def compute_ap(outcomes: Sequence[MatchOutcome], total_gt: int) -> PRCurve:
    """Sweep all outcomes by descending score; tied scores form one threshold."""
    if total_gt <= 0:
        raise UndefinedMetricError("AP is undefined without ground-truth boxes")
    kept = [o for o in outcomes if not o.ignored]
    if not kept:
        empty = np.zeros(0)
        return PRCurve(empty, empty, empty, 0.0)
    scores = np.array([o.score for o in kept], dtype=np.float64)
    hits = np.array([o.matched for o in kept], dtype=np.float64)
    order = descending_order(scores)
    scores, hits = scores[order], hits[order]
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    # last position of every run of equal scores
    ends = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    recall = tp[ends] / total_gt
    precision = tp[ends] / (tp[ends] + fp[ends])
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    ap = float(np.sum(steps * envelope))
    return PRCurve(scores[ends], recall, precision, ap)


def bucket_mask(gt: GroundTruthImage, bucket: str) -> np.ndarray:
    try:
        members = BUCKET_MEMBERS[bucket]
    except KeyError:
        raise InvalidInputError(f"unknown bucket {bucket!r}") from None
    return np.array([tag in members for tag in gt.difficulty], dtype=bool)


def bucketed_ap(
    dets: Sequence[DetectionSet],
    gts: Sequence[GroundTruthImage],
    buckets: Sequence[str] = DIFFICULTIES,
    score: str = "confidence",
    iou_threshold: float = 0.5,
) -> ApReport:
    """AP per cumulative difficulty bucket; empty buckets are reported as ``None``."""
    by_id = _pair_up(dets, gts)
    aps, curves = {}, {}
    for bucket in buckets:
        outcomes, total = [], 0
        for ds, gt in by_id:
            mask = bucket_mask(gt, bucket)
            total += int(mask.sum())
            outcomes.extend(match_detections(ds, gt, iou_threshold, score, valid_gt=mask))
        if total == 0:
            aps[bucket] = None
            continue
        curve = compute_ap(outcomes, total)
        aps[bucket] = curve.ap
        curves[bucket] = curve
    return ApReport(aps.get("easy"), aps.get("medium"), aps.get("hard"), curves)


def _pair_up(dets, gts):
    gt_by_id = {g.image_id: g for g in gts}
    if len(gt_by_id) != len(gts):
        raise InvalidInputError("duplicate image ids in ground truth")
    pairs = []
    seen = set()
    for ds in dets:
        gt = gt_by_id.get(ds.image_id)
        if gt is None:
            raise InvalidInputError(f"no ground truth for image {ds.image_id!r}")
        pairs.append((ds, gt))
        seen.add(ds.image_id)
    for gt in gts:
        if gt.image_id not in seen:
            # images without any detections still contribute their GT count
            pairs.append((DetectionSet.empty(gt.image_id, gt.image_width, gt.image_height), gt))
    return pairs


def evaluate(
    dets: Sequence[DetectionSet],
    gts: Sequence[GroundTruthImage],
    score: str = "confidence",
    nms_iou: float | None = 0.4,
    match_iou: float = 0.5,
    buckets: Sequence[str] = DIFFICULTIES,
) -> ApReport:
    """NMS each image on ``score`` (unless ``nms_iou`` is None), then bucketed AP."""
    if nms_iou is not None:
        dets = [nms(ds, score, nms_iou) for ds in dets]
    return bucketed_ap(dets, gts, buckets, score, match_iou)


def kendall_tau(refined, oracle) -> float:
    """Kendall tau-b between two score sequences; NaN if either is constant."""
    a = np.asarray(refined, dtype=np.float64).reshape(-1)
    b = np.asarray(oracle, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {a.size} vs {b.size}")
    n = a.size
    concordant = 0.0
    ties_a = ties_b = 0
    for i in range(n - 1):
        da = np.sign(a[i] - a[i + 1 :])
        db = np.sign(b[i] - b[i + 1 :])
        concordant += float(np.sum(da * db))
        ties_a += int(np.sum(da == 0))
        ties_b += int(np.sum(db == 0))
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - ties_a) * (n0 - ties_b))
    if denom == 0:
        return float("nan")
    return max(-1.0, min(1.0, concordant / denom))


def mean_kendall_tau(dets: Sequence[DetectionSet], score: str = "refined") -> float:
    """Per-image tau between ``score`` and the oracle, averaged over images where defined."""
    taus = [kendall_tau(ds.scores(score), ds.scores("oracle")) for ds in dets if len(ds) > 1]
    taus = [t for t in taus if not math.isnan(t)]
    return float(np.mean(taus)) if taus else float("nan")


def write_pr_curve(path, curve: PRCurve) -> None:
    with open(path, "w") as fh:
        fh.write("# score precision recall\n")
        for s, p, r in zip(curve.thresholds, curve.precision, curve.recall):
            fh.write(f"{s:.6f} {p:.6f} {r:.6f}\n")


def report_summary(report: ApReport, **extra) -> str:
    payload = {"ap": report.as_dict()}
    payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
