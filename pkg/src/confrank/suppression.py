"""Greedy NMS, box voting and multi-scale fusion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import DetectionSet, descending_order, iou_matrix
from .validation import InvalidInputError, check_open_unit_interval


@dataclass(frozen=True)
class FusionConfig:
    nms_iou: float = 0.4
    voting_iou: float = 0.4
    scales: tuple = (500.0, 800.0, 1100.0, 1400.0, 1700.0)
    flip: bool = True

    def __post_init__(self):
        check_open_unit_interval(self.nms_iou, "nms_iou")
        check_open_unit_interval(self.voting_iou, "voting_iou")
        scales = tuple(float(s) for s in self.scales)
        if any(s <= 0 for s in scales):
            raise InvalidInputError("scales must be positive")
        object.__setattr__(self, "scales", scales)


def nms_indices(boxes, scores, iou_threshold: float) -> np.ndarray:
    """Indices kept by greedy NMS, in keep order.

    Candidates are visited by descending score (ties by index); every
    remaining box with IoU >= ``iou_threshold`` against a kept box is dropped.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    order = descending_order(scores)
    if order.size == 0:
        return order
    overlaps = iou_matrix(boxes[order], boxes[order])
    alive = np.ones(order.size, dtype=bool)
    keep = []
    for pos in range(order.size):
        if not alive[pos]:
            continue
        keep.append(pos)
        alive[pos + 1 :] &= overlaps[pos, pos + 1 :] < iou_threshold
    return order[np.array(keep, dtype=np.intp)]


def nms(ds: DetectionSet, score: str = "confidence", iou_threshold: float = 0.4) -> DetectionSet:
    scores = ds.scores(score)
    return ds.subset(nms_indices(ds.boxes, scores, iou_threshold))


def box_voting(
    kept: DetectionSet, all: DetectionSet, voting_iou: float = 0.4, score: str = "confidence"
) -> DetectionSet:
    """Replace each kept box by the score-weighted mean of its voters.

    Voters are the boxes of ``all`` with IoU >= ``voting_iou`` against the kept
    box. Kept scores are left untouched. A kept box whose voters all have zero
    weight keeps its coordinates.
    """
    if len(kept) == 0:
        return kept
    weights = all.scores(score)
    overlaps = iou_matrix(kept.boxes, all.boxes)
    voters = overlaps >= voting_iou
    # a kept box always votes for itself, even if rounding puts its self-IoU below 1
    same = np.all(kept.boxes[:, None, :] == all.boxes[None, :, :], axis=2)
    voters |= same
    w = voters * weights[None, :]
    total = w.sum(axis=1)
    voted = np.where(
        total[:, None] > 0,
        (w @ all.boxes) / np.where(total > 0, total, 1.0)[:, None],
        kept.boxes,
    )
    return kept.replace(boxes=voted)


def concatenate(sets: list[DetectionSet]) -> DetectionSet:
    first = sets[0]
    fields = {}
    for name in ("oracle", "refined"):
        values = [getattr(s, name) for s in sets]
        if all(v is not None for v in values):
            fields[name] = np.concatenate(values)
    return first.replace(
        boxes=np.concatenate([s.boxes for s in sets]),
        confidence=np.concatenate([s.confidence for s in sets]),
        oracle=fields.get("oracle"),
        refined=fields.get("refined"),
    )


def multiscale_fuse(
    per_scale: list[DetectionSet], cfg: FusionConfig = FusionConfig(), score: str = "confidence"
) -> DetectionSet:
    """Fuse per-scale detections (already in original-image coordinates).

    An empty input list gives an empty set with a blank image id. Exact
    duplicates are not removed before voting.
    """
    if not per_scale:
        return DetectionSet.empty("", 0.0, 0.0)
    ids = {s.image_id for s in per_scale}
    if len(ids) != 1:
        raise InvalidInputError(f"cannot fuse detections of different images: {sorted(ids)}")
    merged = concatenate(per_scale)
    kept = nms(merged, score, cfg.nms_iou)
    return box_voting(kept, merged, cfg.voting_iou, score)
