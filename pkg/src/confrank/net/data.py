"""Turning detection sets into network inputs, and box-space augmentation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geometry import DetectionSet, GroundTruthImage, clip_boxes, normalize_detections
from ..validation import InvalidInputError, check_array


def box_matrix(ds: DetectionSet, capacity: int):
    """``(capacity, 5)`` input matrix and the detection index of each used row.

    Rows are normalised ``[x, y, w, h, conf]`` sorted by descending raw
    confidence; detections beyond ``capacity`` are dropped and unused rows are
    zero.
    """
    norm = normalize_detections(ds)
    order = norm.order("confidence")[:capacity]
    mat = np.zeros((capacity, 5))
    mat[: order.size, :4] = norm.boxes[order]
    mat[: order.size, 4] = norm.confidence[order]
    return mat, order


@dataclass(frozen=True, eq=False)
class Sample:
    """One image: its feature array and one or more detector outputs for it."""

    features: np.ndarray
    detections: tuple

    @classmethod
    def coerce(cls, item) -> "Sample":
        if isinstance(item, Sample):
            return item
        try:
            features, dets = item
        except (TypeError, ValueError):
            raise InvalidInputError(
                "each sample must be a Sample or a (features, detections) pair"
            ) from None
        if isinstance(dets, DetectionSet):
            dets = (dets,)
        elif isinstance(dets, dict):
            dets = tuple(dets.values())
        dets = tuple(dets)
        if not dets or not all(isinstance(d, DetectionSet) for d in dets):
            raise InvalidInputError("sample detections must be one or more DetectionSet objects")
        return cls(check_array(features, "features", ndim=3), dets)


def check_samples(X, require_oracle: bool = False, feature_shape=None) -> list[Sample]:
    samples = [Sample.coerce(item) for item in X]
    for s in samples:
        if feature_shape is not None and s.features.shape != tuple(feature_shape):
            raise InvalidInputError(
                f"features have shape {s.features.shape}, network expects {tuple(feature_shape)}"
            )
        if require_oracle:
            for d in s.detections:
                if d.oracle is None:
                    raise InvalidInputError(f"image {d.image_id!r} has no oracle confidences")
    return samples


def augment_boxes(ds: DetectionSet, gt: GroundTruthImage, transform: dict):
    """Apply a crop / scale / mirror to detections and GT alike.

    ``transform`` keys (all optional, applied in this order):
    ``crop=(x, y, w, h)`` in pixels, ``scale=s`` and ``mirror=True``. Boxes
    fully outside the crop are dropped; partially outside ones are clipped.
    Mirroring flips x about the centre of the (cropped) frame.
    """
    if ds.image_id != gt.image_id:
        raise InvalidInputError("detections and ground truth refer to different images")
    width, height = ds.image_width, ds.image_height
    det_boxes, gt_boxes = ds.boxes.copy(), gt.boxes.copy()
    det_keep = np.ones(len(ds), dtype=bool)
    gt_keep = np.ones(len(gt), dtype=bool)
    crop = transform.get("crop")
    if crop is not None:
        cx, cy, cw, ch = (float(v) for v in crop)
        if cw <= 0 or ch <= 0:
            raise InvalidInputError(f"empty crop region {crop}")
        offset = np.array([cx, cy, 0.0, 0.0])
        det_boxes = clip_boxes(det_boxes - offset, cw, ch)
        gt_boxes = clip_boxes(gt_boxes - offset, cw, ch)
        det_keep = _inside(ds.boxes, cx, cy, cw, ch)
        gt_keep = _inside(gt.boxes, cx, cy, cw, ch)
        width, height = cw, ch
    scale = float(transform.get("scale", 1.0))
    if scale <= 0:
        raise InvalidInputError(f"scale must be positive, got {scale}")
    if scale != 1.0:
        det_boxes = det_boxes * scale
        gt_boxes = gt_boxes * scale
        width, height = width * scale, height * scale
    if transform.get("mirror"):
        det_boxes[:, 0] = width - det_boxes[:, 0] - det_boxes[:, 2]
        gt_boxes[:, 0] = width - gt_boxes[:, 0] - gt_boxes[:, 2]
    new_ds = ds.replace(boxes=det_boxes, image_width=width, image_height=height).subset(
        np.flatnonzero(det_keep)
    )
    tags = tuple(t for t, keep in zip(gt.difficulty, gt_keep) if keep)
    new_gt = GroundTruthImage(gt.image_id, width, height, gt_boxes[gt_keep], tags)
    return new_ds, new_gt


def _inside(boxes, cx, cy, cw, ch) -> np.ndarray:
    x1, y1 = boxes[:, 0], boxes[:, 1]
    x2, y2 = x1 + boxes[:, 2], y1 + boxes[:, 3]
    return (x2 > cx) & (x1 < cx + cw) & (y2 > cy) & (y1 < cy + ch)
