"""Oracle confidences: the IoU of each detection with its best-matching GT box."""

from __future__ import annotations

from .geometry import DetectionSet, GroundTruthImage, best_match_ious
from .validation import InvalidInputError


def _check_same_image(ds: DetectionSet, gt: GroundTruthImage) -> None:
    if ds.image_id != gt.image_id:
        raise InvalidInputError(
            f"detections for {ds.image_id!r} paired with ground truth for {gt.image_id!r}"
        )


def assign_oracle(ds: DetectionSet, gt: GroundTruthImage) -> DetectionSet:
    """Set ``oracle`` to the best IoU against any GT box, whatever its difficulty."""
    _check_same_image(ds, gt)
    return ds.replace(oracle=best_match_ious(ds.boxes, gt.boxes))


def oracle_rescore(ds: DetectionSet, gt: GroundTruthImage) -> DetectionSet:
    """Return ``ds`` with ``refined`` replaced by the oracle confidence."""
    ds = assign_oracle(ds, gt)
    return ds.replace(refined=ds.oracle)
