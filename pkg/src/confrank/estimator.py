"""scikit-learn style wrapper around the ranker network and its training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import evaluate
from .geometry import GroundTruthImage
from .net.data import Sample, check_samples
from .net.network import RankerConfig, RankerNetwork
from .net.train import TrainSchedule, predict_refined, train
from .oracle import assign_oracle
from .validation import InvalidInputError


class ConfidenceRanker(BaseEstimator, TransformerMixin):
    """Learns to re-score detections so that their order follows localization quality.

    ``X`` is a sequence of ``(features, detections)`` items, where
    ``detections`` is a :class:`DetectionSet` or a sequence of them (several
    detectors run on the same image). ``fit`` needs oracle confidences: either
    already present on every set, or computed from ``y``, a sequence of
    :class:`GroundTruthImage` aligned with ``X``.

    Prediction works on every (image, detection set) pair in ``X`` order.
    Detections past ``capacity_n`` in raw-confidence order receive no refined
    score: ``predict`` reports NaN for them and ``transform`` drops them.
    """

    def __init__(
        self,
        capacity_n=64,
        bpn_channels=8,
        bpn_depth=3,
        interleave=2,
        scales=2,
        fpn_channels=16,
        backbone_channels=(8, 16),
        image_size=32,
        image_channels=1,
        loss="rank",
        n_pairs=10,
        batch_size=32,
        n_iter=100_000,
        lr_start=1e-3,
        lr_end=1e-6,
        mirror=True,
        log_every=50,
        random_state=0,
    ):
        self.capacity_n = capacity_n
        self.bpn_channels = bpn_channels
        self.bpn_depth = bpn_depth
        self.interleave = interleave
        self.scales = scales
        self.fpn_channels = fpn_channels
        self.backbone_channels = backbone_channels
        self.image_size = image_size
        self.image_channels = image_channels
        self.loss = loss
        self.n_pairs = n_pairs
        self.batch_size = batch_size
        self.n_iter = n_iter
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.mirror = mirror
        self.log_every = log_every
        self.random_state = random_state

    def _config(self) -> RankerConfig:
        return RankerConfig(
            capacity_n=self.capacity_n, bpn_channels=self.bpn_channels, bpn_depth=self.bpn_depth,
            interleave=self.interleave, scales=self.scales, fpn_channels=self.fpn_channels,
            backbone_channels=tuple(self.backbone_channels), image_size=self.image_size,
            image_channels=self.image_channels,
        )

    def _schedule(self) -> TrainSchedule:
        return TrainSchedule(
            batch_size=self.batch_size, iterations=self.n_iter, lr_start=self.lr_start,
            lr_end=self.lr_end, seed=self._seed(), log_every=self.log_every, mirror=self.mirror,
            loss=self.loss, n_pairs=self.n_pairs,
        )

    def _seed(self) -> int:
        if self.random_state is None:
            return 0
        if isinstance(self.random_state, (int, np.integer)):
            return int(self.random_state)
        raise InvalidInputError("random_state must be an integer or None")

    def _feature_shape(self):
        return (self.image_channels, self.image_size, self.image_size)

    def init_network(self) -> "ConfidenceRanker":
        """Set up an untrained network (identity on confidences) without fitting."""
        self.network_ = RankerNetwork(self._config(), self._seed())
        self.loss_history_ = []
        return self

    def fit(self, X, y=None, callback=None):
        cfg = self._config()
        schedule = self._schedule()
        samples = check_samples(X, require_oracle=y is None, feature_shape=self._feature_shape())
        if y is not None:
            samples = _with_oracle(samples, y)
        net = RankerNetwork(cfg, schedule.seed)
        self.network_, self.loss_history_ = train(net, samples, schedule, callback)
        return self

    def _pairs(self, X):
        samples = check_samples(X, feature_shape=self._feature_shape())
        return [(s.features, ds) for s in samples for ds in s.detections]

    def predict(self, X) -> list[np.ndarray]:
        """Refined confidence arrays, one per (image, detection set) pair."""
        check_is_fitted(self, "network_")
        return predict_refined(self.network_, self._pairs(X))

    def transform(self, X) -> list:
        """Detection sets with the ``refined`` field filled in."""
        check_is_fitted(self, "network_")
        pairs = self._pairs(X)
        out = []
        for (_, ds), scores in zip(pairs, predict_refined(self.network_, pairs)):
            keep = np.flatnonzero(~np.isnan(scores))
            out.append(ds.subset(keep).replace(refined=scores[keep]))
        return out

    def score(self, X, y) -> float:
        """Hard-bucket AP of the refined confidences against ``y`` (aligned with ``X``).

        When items carry several detection sets, the sets at each position are
        evaluated as one detector and the APs are averaged.
        """
        gts = list(y)
        samples = check_samples(X, feature_shape=self._feature_shape())
        if len(gts) != len(samples):
            raise InvalidInputError(f"got {len(samples)} samples but {len(gts)} ground-truth images")
        dets = self.transform(samples)
        width = {len(s.detections) for s in samples}
        if len(width) > 1:
            raise InvalidInputError("every item must carry the same number of detection sets")
        k = width.pop() if width else 1
        aps = [evaluate(dets[j::k], gts, "refined").ap_hard for j in range(k)]
        return float(np.mean(aps))


def _with_oracle(samples: list[Sample], y) -> list[Sample]:
    gts = list(y)
    if len(gts) != len(samples):
        raise InvalidInputError(f"got {len(samples)} samples but {len(gts)} ground-truth images")
    out = []
    for s, gt in zip(samples, gts):
        if not isinstance(gt, GroundTruthImage):
            raise InvalidInputError("y must hold GroundTruthImage objects")
        out.append(Sample(s.features, tuple(assign_oracle(d, gt) for d in s.detections)))
    return out
