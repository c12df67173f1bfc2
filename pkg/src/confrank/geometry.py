"""Box algebra and the detection / ground-truth data model.

Boxes are stored as ``(x, y, w, h)`` with ``(x, y)`` the top-left corner.
Per-image collections keep their boxes in ``(n, 4)`` float64 arrays; the
scalar :class:`BoundingBox` / :class:`Detection` types exist for callers that
want to work one detection at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .validation import InvalidInputError, check_array, check_scores

SCORE_FIELDS = ("confidence", "oracle", "refined")
DIFFICULTIES = ("easy", "medium", "hard")


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidInputError(f"box {name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if self.w < 0 or self.h < 0:
            raise InvalidInputError(f"box extents must be non-negative, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "BoundingBox":
        x, y, w, h = (float(v) for v in values)
        return cls(x, y, w, h)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float
    oracle: float | None = None
    refined: float | None = None

    def __post_init__(self):
        for name in SCORE_FIELDS:
            value = getattr(self, name)
            if value is None:
                continue
            value = float(value)
            if not 0.0 <= value <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {value!r}")
            object.__setattr__(self, name, value)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


def _check_boxes(boxes, name: str) -> np.ndarray:
    arr = check_array(np.reshape(boxes, (-1, 4)) if np.size(boxes) == 0 else boxes, name, shape=(None, 4))
    if arr.size and (arr[:, 2].min() < 0 or arr[:, 3].min() < 0):
        raise InvalidInputError(f"{name}: box extents must be non-negative")
    return arr


@dataclass(frozen=True, eq=False)
class DetectionSet:
    """Detections of one image.

    ``boxes`` is ``(n, 4)`` in image pixels; ``confidence`` is the raw detector
    score; ``oracle`` and ``refined`` are optional per-detection scores.
    """

    image_id: str
    image_width: float
    image_height: float
    boxes: np.ndarray
    confidence: np.ndarray
    oracle: np.ndarray | None = None
    refined: np.ndarray | None = None

    def __post_init__(self):
        boxes = _check_boxes(self.boxes, "boxes")
        n = boxes.shape[0]
        object.__setattr__(self, "image_id", str(self.image_id))
        object.__setattr__(self, "image_width", float(self.image_width))
        object.__setattr__(self, "image_height", float(self.image_height))
        object.__setattr__(self, "boxes", _frozen(boxes))
        for name in SCORE_FIELDS:
            values = getattr(self, name)
            if values is None:
                if name == "confidence":
                    raise InvalidInputError("confidence is required")
                continue
            arr = check_scores(values, name)
            if arr.shape[0] != n:
                raise InvalidInputError(f"{name} has {arr.shape[0]} entries for {n} boxes")
            object.__setattr__(self, name, _frozen(arr))

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DetectionSet):
            return NotImplemented
        if (self.image_id, self.image_width, self.image_height) != (
            other.image_id,
            other.image_width,
            other.image_height,
        ):
            return False
        for name in ("boxes",) + SCORE_FIELDS:
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True

    __hash__ = None

    @classmethod
    def empty(cls, image_id, image_width, image_height) -> "DetectionSet":
        return cls(image_id, image_width, image_height, np.zeros((0, 4)), np.zeros(0))

    @classmethod
    def from_detections(
        cls, image_id, image_width, image_height, detections: Sequence[Detection]
    ) -> "DetectionSet":
        boxes = np.array([d.box.as_array() for d in detections]).reshape(-1, 4)
        conf = np.array([d.confidence for d in detections], dtype=np.float64)
        extra = {}
        for name in ("oracle", "refined"):
            values = [getattr(d, name) for d in detections]
            if detections and all(v is not None for v in values):
                extra[name] = np.array(values, dtype=np.float64)
        return cls(image_id, image_width, image_height, boxes, conf, **extra)

    @property
    def detections(self) -> list[Detection]:
        out = []
        for i in range(len(self)):
            out.append(
                Detection(
                    BoundingBox.from_array(self.boxes[i]),
                    float(self.confidence[i]),
                    None if self.oracle is None else float(self.oracle[i]),
                    None if self.refined is None else float(self.refined[i]),
                )
            )
        return out

    def scores(self, field: str = "confidence") -> np.ndarray:
        if field not in SCORE_FIELDS:
            raise InvalidInputError(f"unknown score field {field!r}; expected one of {SCORE_FIELDS}")
        values = getattr(self, field)
        if values is None:
            raise InvalidInputError(f"image {self.image_id!r}: score field {field!r} is not set")
        return values

    def replace(self, **changes) -> "DetectionSet":
        kwargs = {
            "image_id": self.image_id,
            "image_width": self.image_width,
            "image_height": self.image_height,
            "boxes": self.boxes,
            "confidence": self.confidence,
            "oracle": self.oracle,
            "refined": self.refined,
        }
        kwargs.update(changes)
        return DetectionSet(**kwargs)

    def subset(self, indices) -> "DetectionSet":
        idx = np.asarray(indices, dtype=np.intp).reshape(-1)
        return self.replace(
            boxes=self.boxes[idx],
            confidence=self.confidence[idx],
            oracle=None if self.oracle is None else self.oracle[idx],
            refined=None if self.refined is None else self.refined[idx],
        )

    def order(self, field: str = "confidence") -> np.ndarray:
        """Indices sorting ``field`` descending; ties keep original index order."""
        return descending_order(self.scores(field))

    def sorted(self, field: str = "confidence") -> "DetectionSet":
        return self.subset(self.order(field))


@dataclass(frozen=True, eq=False)
class GroundTruthImage:
    image_id: str
    image_width: float
    image_height: float
    boxes: np.ndarray
    difficulty: tuple = field(default=())

    def __post_init__(self):
        boxes = _check_boxes(self.boxes, "gt boxes")
        object.__setattr__(self, "image_id", str(self.image_id))
        object.__setattr__(self, "image_width", float(self.image_width))
        object.__setattr__(self, "image_height", float(self.image_height))
        object.__setattr__(self, "boxes", _frozen(boxes))
        tags = tuple(self.difficulty) if self.difficulty else ("hard",) * boxes.shape[0]
        if len(tags) != boxes.shape[0]:
            raise InvalidInputError(
                f"difficulty has {len(tags)} tags for {boxes.shape[0]} boxes"
            )
        bad = [t for t in tags if t not in DIFFICULTIES]
        if bad:
            raise InvalidInputError(f"unknown difficulty tag {bad[0]!r}")
        object.__setattr__(self, "difficulty", tags)

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, GroundTruthImage):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.image_width == other.image_width
            and self.image_height == other.image_height
            and np.array_equal(self.boxes, other.boxes)
            and self.difficulty == other.difficulty
        )

    __hash__ = None

    @property
    def box_list(self) -> list[BoundingBox]:
        return [BoundingBox.from_array(b) for b in self.boxes]


def descending_order(values) -> np.ndarray:
    """Stable descending argsort: equal values keep their original order."""
    values = np.asarray(values, dtype=np.float64)
    return np.argsort(-values, kind="stable")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between ``(n, 4)`` and ``(m, 4)`` xywh arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = bx1 + b[:, 2], by1 + b[:, 3]
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0, None)
    inter = iw * ih
    union = (a[:, 2:3] * a[:, 3:4]) + (b[:, 2] * b[:, 3]) - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return np.minimum(out, 1.0)


def best_match_iou(d: BoundingBox, gts: Iterable[BoundingBox]) -> float:
    best = 0.0
    for gt in gts:
        best = max(best, iou(d, gt))
    return best


def best_match_ious(boxes, gt_boxes) -> np.ndarray:
    """Vectorised :func:`best_match_iou` for every row of ``boxes``."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if gt_boxes.shape[0] == 0 or boxes.shape[0] == 0:
        return np.zeros(boxes.shape[0])
    return iou_matrix(boxes, gt_boxes).max(axis=1)


def clip_boxes(boxes, width: float, height: float) -> np.ndarray:
    """Clip xywh boxes to the ``[0, width] x [0, height]`` frame."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    x1 = np.clip(boxes[:, 0], 0.0, width)
    y1 = np.clip(boxes[:, 1], 0.0, height)
    x2 = np.clip(boxes[:, 0] + boxes[:, 2], 0.0, width)
    y2 = np.clip(boxes[:, 1] + boxes[:, 3], 0.0, height)
    return np.stack([x1, y1, x2 - x1, y2 - y1], axis=1)


def normalize_detections(ds: DetectionSet) -> DetectionSet:
    """Map boxes into the unit frame; out-of-frame parts are clipped.

    The result reports ``image_width == image_height == 1``.
    """
    if ds.image_width <= 0 or ds.image_height <= 0:
        raise InvalidInputError(
            f"image {ds.image_id!r} has non-positive size {ds.image_width}x{ds.image_height}"
        )
    scale = np.array([ds.image_width, ds.image_height, ds.image_width, ds.image_height])
    boxes = clip_boxes(ds.boxes / scale, 1.0, 1.0)
    return ds.replace(boxes=boxes, image_width=1.0, image_height=1.0)


def denormalize_detections(ds: DetectionSet, width: float, height: float) -> DetectionSet:
    if width <= 0 or height <= 0:
        raise InvalidInputError(f"non-positive image size {width}x{height}")
    scale = np.array([width, height, width, height])
    return ds.replace(boxes=ds.boxes * scale, image_width=width, image_height=height)
