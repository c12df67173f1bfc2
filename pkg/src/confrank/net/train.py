"""Adam training of the ranker with an exponentially decaying learning rate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..ranking import LOSSES, image_loss_arrays
from ..validation import InvalidInputError
from .data import Sample, box_matrix
from .network import RankerNetwork

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSchedule:
    batch_size: int = 32
    iterations: int = 100_000
    lr_start: float = 1e-3
    lr_end: float = 1e-6
    seed: int = 0
    log_every: int = 50
    mirror: bool = True
    loss: str = "rank"
    n_pairs: int = 10

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise InvalidInputError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.lr_start <= 0 or self.lr_end <= 0:
            raise InvalidInputError("learning rates must be positive")

    def learning_rate(self, step: int) -> float:
        """Geometric interpolation from ``lr_start`` (step 0) to ``lr_end`` (last step)."""
        if self.iterations <= 1:
            return self.lr_start
        frac = step / self.iterations
        return self.lr_start * (self.lr_end / self.lr_start) ** frac


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, net: RankerNetwork, grads: dict, lr: float) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, param in net.parameters.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(param)
                self.v[name] = np.zeros_like(param)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            param -= lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
        net.bump()


def make_batch(net: RankerNetwork, items, mirror_flags=None):
    """Stack ``(features, DetectionSet)`` items into network inputs.

    Returns ``(boxes, images, counts, orders)``; ``orders[b]`` maps matrix rows
    back to detection indices.
    """
    cfg = net.config
    boxes = np.zeros((len(items), cfg.capacity_n, 5))
    images = np.zeros((len(items), cfg.image_channels, cfg.image_size, cfg.image_size))
    counts, orders = [], []
    for b, (features, ds) in enumerate(items):
        mat, order = box_matrix(ds, cfg.capacity_n)
        img = features
        if mirror_flags is not None and mirror_flags[b]:
            m = order.size
            mat[:m, 0] = 1.0 - mat[:m, 0] - mat[:m, 2]
            img = features[:, :, ::-1]
        boxes[b] = mat
        images[b] = img
        counts.append(order.size)
        orders.append(order)
    return boxes, images, counts, orders


def batch_loss(refined, boxes, counts, oracles, loss: str, n_pairs: int):
    """Mean per-image loss of a batch and its gradient w.r.t. ``refined``."""
    grad = np.zeros_like(refined)
    total = 0.0
    for b, m in enumerate(counts):
        value, g = image_loss_arrays(refined[b, :m], oracles[b], boxes[b, :m, 4], loss, n_pairs)
        total += value
        grad[b, :m] = g
    bsz = len(counts)
    return total / bsz, grad / bsz


def train(
    net: RankerNetwork,
    dataset: Sequence[Sample],
    schedule: TrainSchedule = TrainSchedule(),
    callback=None,
):
    """Train ``net`` in place; returns ``(net, history)``.

    Each iteration draws ``batch_size`` images (reshuffled every epoch) and,
    for each, one of its detector outputs at random. ``history`` holds
    ``(iteration, mean loss)`` averaged over each ``log_every`` window.
    """
    if not dataset:
        raise InvalidInputError("cannot train on an empty dataset")
    for s in dataset:
        for d in s.detections:
            if d.oracle is None:
                raise InvalidInputError(f"image {d.image_id!r} has no oracle confidences")
    rng = np.random.default_rng(schedule.seed)
    opt = Adam()
    history = []
    window = []
    perm = np.zeros(0, dtype=np.intp)
    cursor = 0
    for step in range(schedule.iterations):
        idx = []
        while len(idx) < schedule.batch_size:
            if cursor >= perm.size:
                perm = rng.permutation(len(dataset))
                cursor = 0
            take = min(schedule.batch_size - len(idx), perm.size - cursor)
            idx.extend(perm[cursor : cursor + take].tolist())
            cursor += take
        items = []
        for i in idx:
            s = dataset[i]
            items.append((s.features, s.detections[int(rng.integers(len(s.detections)))]))
        flags = rng.random(len(items)) < 0.5 if schedule.mirror else None
        boxes, images, counts, orders = make_batch(net, items, flags)
        oracles = [ds.oracle[order] for (_, ds), order in zip(items, orders)]
        refined, trace = net.forward(boxes, images, with_trace=True)
        value, d_refined = batch_loss(refined, boxes, counts, oracles, schedule.loss, schedule.n_pairs)
        grads, _ = net.backward(trace, d_refined)
        opt.step(net, grads, schedule.learning_rate(step))
        window.append(value)
        if len(window) == schedule.log_every or step == schedule.iterations - 1:
            history.append((step + 1, float(np.mean(window))))
            log.debug("iter %d loss %.5f", step + 1, history[-1][1])
            window = []
        if callback is not None:
            callback(step, value, net)
    return net, history


def predict_refined(net: RankerNetwork, items, batch_size: int = 64) -> list[np.ndarray]:
    """Refined confidence per detection for ``(features, DetectionSet)`` items.

    Detections beyond the network capacity keep no refined score and are
    reported as NaN; callers decide whether to drop them.
    """
    out = []
    for start in range(0, len(items), batch_size):
        chunk = items[start : start + batch_size]
        boxes, images, counts, orders = make_batch(net, chunk)
        refined = net.forward(boxes, images)
        for b, ((_, ds), order) in enumerate(zip(chunk, orders)):
            scores = np.full(len(ds), np.nan)
            scores[order] = refined[b, : order.size]
            out.append(scores)
    return out
