"""Pairwise ranking loss on confidences, plus regression baselines.

The ranking loss is the RankNet form: for a pair ``(c1, c2)`` of refined
confidences with target ``t = 1 - Y`` (``t = 1`` when the first detection
has the strictly larger oracle confidence),

    loss = -t * log(sigmoid(c1 - c2)) - (1 - t) * log(1 - sigmoid(c1 - c2)),

evaluated as ``softplus(d) - t * d`` so saturated pairs stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DetectionSet, descending_order
from .validation import InvalidInputError, check_positive_int

REGRESSION_LOSSES = ("l1", "l2", "smooth_l1", "cross_entropy")
RANKING_LOSSES = ("rank", "margin")
LOSSES = RANKING_LOSSES + REGRESSION_LOSSES

CE_EPS = 1e-7


@dataclass(frozen=True)
class LossValue:
    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class PairSet:
    """Pairs ``(i, i + k, k)`` of positions in a descending-sorted list."""

    pairs: np.ndarray
    n: int

    def __len__(self) -> int:
        return self.pairs.shape[0]

    def level(self, k: int) -> np.ndarray:
        return self.pairs[self.pairs[:, 2] == k]


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


def pair_label(c_gt_1: float, c_gt_2: float) -> int:
    """0 when the first oracle confidence is strictly larger, else 1."""
    return 0 if c_gt_1 > c_gt_2 else 1


def _pair_terms(d, t):
    """Loss and dL/dd of the sigmoid cross-entropy on logit ``d``."""
    loss = np.logaddexp(0.0, d) - t * d
    return loss, sigmoid(d) - t


def rank_loss(c1: float, c2: float, y: int) -> LossValue:
    t = 1.0 - float(y)
    loss, g = _pair_terms(float(c1) - float(c2), t)
    return LossValue(float(loss), np.array([g, -g], dtype=np.float64))


def _margin_logit(d, c_gt_1, c_gt_2):
    t = (np.asarray(c_gt_1) > np.asarray(c_gt_2)).astype(np.float64)
    margin = np.abs(np.asarray(c_gt_1, dtype=np.float64) - c_gt_2)
    return d - margin * (2.0 * t - 1.0), t


def rank_loss_margin(c1: float, c2: float, c_gt_1: float, c_gt_2: float) -> LossValue:
    """Ranking loss whose logit is shifted against the target by the oracle gap.

    The shift makes the pair count as satisfied only once the refined gap
    exceeds the oracle gap, pushing confidences apart.
    """
    d, t = _margin_logit(float(c1) - float(c2), c_gt_1, c_gt_2)
    loss, g = _pair_terms(d, t)
    return LossValue(float(loss), np.array([g, -g], dtype=np.float64))


def select_pairs(sorted_confidences, n: int) -> PairSet:
    """All pairs ``(i, i + k)`` for skip levels ``k = 1..n``."""
    n = check_positive_int(n, "n")
    conf = np.asarray(sorted_confidences, dtype=np.float64).reshape(-1)
    if conf.size > 1 and np.any(np.diff(conf) > 0):
        raise InvalidInputError("select_pairs expects confidences sorted in descending order")
    chunks = []
    for k in range(1, min(n, conf.size - 1) + 1):
        i = np.arange(conf.size - k, dtype=np.intp)
        chunks.append(np.stack([i, i + k, np.full_like(i, k)], axis=1))
    pairs = np.concatenate(chunks) if chunks else np.zeros((0, 3), dtype=np.intp)
    return PairSet(pairs, n)


def ranking_loss_arrays(refined, oracle, raw, n: int, margin: bool = False):
    """Per-image ranking loss on flat arrays of real detections.

    Pairs come from the raw-confidence order. Each skip level ``k`` is averaged
    over its pairs and weighted by ``1 / k``. Returns ``(value, d_refined)``.
    """
    refined = np.asarray(refined, dtype=np.float64)
    oracle = np.asarray(oracle, dtype=np.float64)
    grad = np.zeros_like(refined)
    if refined.size < 2:
        return 0.0, grad
    order = descending_order(raw)
    pairs = select_pairs(np.asarray(raw, dtype=np.float64)[order], n).pairs
    i, j, k = order[pairs[:, 0]], order[pairs[:, 1]], pairs[:, 2]
    d = refined[i] - refined[j]
    if margin:
        d, t = _margin_logit(d, oracle[i], oracle[j])
    else:
        t = (oracle[i] > oracle[j]).astype(np.float64)
    loss, g = _pair_terms(d, t)
    counts = np.bincount(k)
    weight = 1.0 / (k * counts[k])
    np.add.at(grad, i, weight * g)
    np.add.at(grad, j, -weight * g)
    return float(np.sum(weight * loss)), grad


def image_rank_loss(ds: DetectionSet, n: int = 10, margin: bool = False) -> LossValue:
    value, grad = ranking_loss_arrays(
        ds.scores("refined"), ds.scores("oracle"), ds.confidence, n, margin=margin
    )
    return LossValue(value, grad)


def regression_terms(c, o, kind: str):
    """Elementwise regression loss and d/dc for one of :data:`REGRESSION_LOSSES`."""
    c = np.asarray(c, dtype=np.float64)
    o = np.asarray(o, dtype=np.float64)
    diff = c - o
    if kind == "l1":
        return np.abs(diff), np.sign(diff)
    if kind == "l2":
        return diff**2, 2.0 * diff
    if kind == "smooth_l1":
        small = np.abs(diff) < 1.0
        loss = np.where(small, 0.5 * diff**2, np.abs(diff) - 0.5)
        return loss, np.where(small, diff, np.sign(diff))
    if kind == "cross_entropy":
        p = np.clip(c, CE_EPS, 1.0 - CE_EPS)
        loss = -(o * np.log(p) + (1.0 - o) * np.log1p(-p))
        interior = (c > CE_EPS) & (c < 1.0 - CE_EPS)
        return loss, np.where(interior, (p - o) / (p * (1.0 - p)), 0.0)
    raise InvalidInputError(f"unknown regression loss {kind!r}; expected one of {REGRESSION_LOSSES}")


def regression_losses(c_refined: float, c_oracle: float, kind: str = "l2") -> LossValue:
    loss, g = regression_terms(c_refined, c_oracle, kind)
    return LossValue(float(loss), np.atleast_1d(np.asarray(g, dtype=np.float64)))


def regression_loss_arrays(refined, oracle, kind: str):
    """Mean regression loss over the detections of one image."""
    refined = np.asarray(refined, dtype=np.float64)
    if refined.size == 0:
        return 0.0, np.zeros(0)
    loss, g = regression_terms(refined, oracle, kind)
    return float(loss.mean()), g / refined.size


def image_loss_arrays(refined, oracle, raw, loss: str = "rank", n: int = 10):
    """Dispatch on ``loss`` (one of :data:`LOSSES`); returns ``(value, d_refined)``."""
    if loss == "rank":
        return ranking_loss_arrays(refined, oracle, raw, n)
    if loss == "margin":
        return ranking_loss_arrays(refined, oracle, raw, n, margin=True)
    return regression_loss_arrays(refined, oracle, loss)
