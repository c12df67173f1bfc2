"""Synthetic scenes and simulated detector outputs.

A scene is a set of face-like GT boxes plus a few distractor regions. Its
"image" is a small feature array in which GT boxes are sharp Gaussian blobs
and distractors are faint, blurry ones. A :class:`DetectorPersonality`
simulates one detector on a scene: jittered duplicates around every GT,
false positives drawn towards distractors, and a confidence model that maps
each box's true IoU to an emitted score with bias, noise and inversion.

Box coordinates are quantised to 0.01 px and scores to 1e-6 so that the text
dumps written by :mod:`confrank.io` reproduce them exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geometry import DetectionSet, GroundTruthImage, clip_boxes, iou_matrix
from .oracle import assign_oracle
from .validation import InvalidInputError


def quantize_coords(values) -> np.ndarray:
    return np.array([float(f"{v:.2f}") for v in np.ravel(values)]).reshape(np.shape(values))


def quantize_scores(values) -> np.ndarray:
    return np.array([float(f"{v:.6f}") for v in np.ravel(values)]).reshape(np.shape(values))


@dataclass(frozen=True)
class SceneSpec:
    image_width: float = 256.0
    image_height: float = 256.0
    n_gt: tuple = (1, 4)
    height_range: tuple = (16.0, 96.0)
    aspect_range: tuple = (0.7, 0.9)
    max_gt_iou: float = 0.0
    n_distractors: tuple = (1, 3)
    feature_size: int = 32
    feature_noise: float = 0.05

    def __post_init__(self):
        lo, hi = self.height_range
        if not 0 < lo <= hi:
            raise InvalidInputError(f"invalid height_range {self.height_range}")
        if hi > self.image_height or hi * max(self.aspect_range) > self.image_width:
            raise InvalidInputError("boxes from height_range do not fit in the frame")
        if self.n_gt[0] < 0 or self.n_gt[1] < self.n_gt[0]:
            raise InvalidInputError(f"invalid n_gt range {self.n_gt}")

    def difficulty_edges(self) -> tuple[float, float]:
        """Height terciles of the log-uniform height distribution."""
        lo, hi = (math.log(v) for v in self.height_range)
        return math.exp(lo + (hi - lo) / 3), math.exp(lo + 2 * (hi - lo) / 3)


@dataclass(frozen=True)
class DetectorPersonality:
    """Simulated detector.

    ``loc_noise`` is the jitter scale as a fraction of box size; the first
    duplicate of every GT uses ``loc_noise * anchor_noise``. The confidence of
    a box with true IoU ``q`` is ``link(scale * q' + bias + noise * eps)`` with
    ``q' = 1 - q`` with probability ``inversion`` (else ``q``); ``link`` is a
    clip to [0, 1] (``"linear"``) or a sigmoid of ``scale * (q' - 0.5) + ...``.
    False positives get a separate ``fp_bias`` added before the link, and
    ``drift`` is the standard deviation of one offset shared by every box of
    an image (per-image calibration shift).
    """

    name: str = "identity"
    loc_noise: float = 0.0
    anchor_noise: float = 0.3
    duplicates: tuple = (1, 1)
    miss_rate: float = 0.0
    fp_rate: float = 0.0
    fp_near_distractor: float = 0.7
    fp_height_range: tuple = (0.06, 0.35)
    link: str = "linear"
    scale: float = 1.0
    bias: float = 0.0
    fp_bias: float = 0.0
    noise: float = 0.0
    inversion: float = 0.0
    drift: float = 0.0

    def __post_init__(self):
        if self.link not in ("linear", "sigmoid"):
            raise InvalidInputError(f"unknown link {self.link!r}")
        if not 0.0 <= self.inversion <= 1.0 or not 0.0 <= self.miss_rate <= 1.0:
            raise InvalidInputError("probabilities must lie in [0, 1]")
        if self.duplicates[0] < 1 or self.duplicates[1] < self.duplicates[0]:
            raise InvalidInputError(f"invalid duplicates range {self.duplicates}")


DEFAULT_PERSONALITIES = (
    DetectorPersonality(
        name="sharp",
        loc_noise=0.12,
        duplicates=(2, 4),
        fp_rate=1.5,
        link="sigmoid",
        scale=8.0,
        bias=1.0,
        fp_bias=0.0,
        noise=1.0,
    ),
    DetectorPersonality(
        name="inverted",
        loc_noise=0.12,
        duplicates=(2, 4),
        fp_rate=2.0,
        link="sigmoid",
        scale=6.0,
        bias=-0.5,
        noise=0.3,
        inversion=1.0,
    ),
)


@dataclass(frozen=True, eq=False)
class Scene:
    gt: GroundTruthImage
    features: np.ndarray
    distractors: np.ndarray


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def render_features(boxes, distractors, width, height, size, noise, rng) -> np.ndarray:
    """Soft-blob rendering of GT boxes (sharp) and distractors (faint, blurry)."""
    centers = (np.arange(size) + 0.5) / size
    gx, gy = np.meshgrid(centers, centers)
    img = np.zeros((size, size))
    for group, amp, blur in ((boxes, 1.0, 0.35), (distractors, 0.5, 0.8)):
        for x, y, w, h in np.reshape(group, (-1, 4)):
            cx, cy = (x + w / 2) / width, (y + h / 2) / height
            sx = max(blur * w / width, 0.5 / size)
            sy = max(blur * h / height, 0.5 / size)
            img += amp * np.exp(-0.5 * (((gx - cx) / sx) ** 2 + ((gy - cy) / sy) ** 2))
    if noise > 0:
        img += rng.normal(0.0, noise, size=img.shape)
    return img[None]


def _sample_boxes(rng, spec: SceneSpec, count: int, avoid=None, max_iou=0.0):
    lo, hi = math.log(spec.height_range[0]), math.log(spec.height_range[1])
    boxes = []
    placed = np.zeros((0, 4)) if avoid is None else np.reshape(avoid, (-1, 4))
    for _ in range(count):
        h = math.exp(rng.uniform(lo, hi))
        w = h * rng.uniform(*spec.aspect_range)
        for _attempt in range(200):
            x = rng.uniform(0.0, spec.image_width - w)
            y = rng.uniform(0.0, spec.image_height - h)
            cand = quantize_coords([x, y, w, h])
            if placed.shape[0] == 0 or iou_matrix(cand[None], placed).max() <= max_iou:
                break
        boxes.append(cand)
        placed = np.vstack([placed, cand[None]])
    return np.reshape(np.array(boxes), (-1, 4))


def generate_scene(spec: SceneSpec, seed, image_id: str = "scene") -> Scene:
    """Sample GT boxes (log-uniform heights) and render their feature array."""
    rng = _rng(seed)
    n = int(rng.integers(spec.n_gt[0], spec.n_gt[1] + 1))
    boxes = _sample_boxes(rng, spec, n, max_iou=spec.max_gt_iou)
    n_dis = int(rng.integers(spec.n_distractors[0], spec.n_distractors[1] + 1)) if n else 0
    distractors = _sample_boxes(rng, spec, n_dis, avoid=boxes, max_iou=0.0)
    easy_edge, medium_edge = spec.difficulty_edges()
    tags = tuple(
        "easy" if h >= medium_edge else "medium" if h >= easy_edge else "hard" for h in boxes[:, 3]
    )
    gt = GroundTruthImage(image_id, spec.image_width, spec.image_height, boxes, tags)
    if n == 0:
        features = np.zeros((1, spec.feature_size, spec.feature_size))
    else:
        features = render_features(
            boxes, distractors, spec.image_width, spec.image_height,
            spec.feature_size, spec.feature_noise, rng,
        )
    return Scene(gt, features, distractors)


def _jitter(rng, box, sigma):
    x, y, w, h = box
    cx = x + w / 2 + sigma * w * rng.normal()
    cy = y + h / 2 + sigma * h * rng.normal()
    w2 = w * math.exp(sigma * rng.normal())
    h2 = h * math.exp(sigma * rng.normal())
    return [cx - w2 / 2, cy - h2 / 2, w2, h2]


def _confidence(rng, p: DetectorPersonality, quality, is_fp):
    q = np.asarray(quality, dtype=np.float64)
    flip = rng.random(q.shape) < p.inversion
    q = np.where(flip, 1.0 - q, q)
    eps = rng.normal(size=q.shape)
    offset = p.bias + p.fp_bias * is_fp + p.noise * eps
    if p.drift > 0:
        offset = offset + p.drift * rng.normal()
    if p.link == "linear":
        return np.clip(p.scale * q + offset, 0.0, 1.0)
    return 1.0 / (1.0 + np.exp(-(p.scale * (q - 0.5) + offset)))


def run_personality(
    gt: GroundTruthImage, p: DetectorPersonality, seed, distractors=None
) -> DetectionSet:
    """Simulate detector ``p`` on a scene. The oracle field is left unset."""
    rng = _rng(seed)
    W, H = gt.image_width, gt.image_height
    boxes, owner = [], []
    for g, box in enumerate(gt.boxes):
        if rng.random() < p.miss_rate:
            continue
        k = int(rng.integers(p.duplicates[0], p.duplicates[1] + 1))
        for d in range(k):
            sigma = p.loc_noise * (p.anchor_noise if d == 0 else 1.0)
            boxes.append(_jitter(rng, box, sigma))
            owner.append(g)
    n_fp = int(rng.poisson(p.fp_rate)) if p.fp_rate > 0 else 0
    dis = np.reshape(distractors if distractors is not None else np.zeros((0, 4)), (-1, 4))
    lo, hi = (math.log(v * H) for v in p.fp_height_range)
    for _ in range(n_fp):
        if dis.shape[0] and rng.random() < p.fp_near_distractor:
            boxes.append(_jitter(rng, dis[rng.integers(dis.shape[0])], max(p.loc_noise, 0.1)))
        else:
            h = math.exp(rng.uniform(lo, hi))
            w = h * rng.uniform(0.7, 0.9)
            boxes.append([rng.uniform(0, W - w), rng.uniform(0, H - h), w, h])
        owner.append(-1)
    if not boxes:
        return DetectionSet.empty(gt.image_id, W, H)
    boxes = quantize_coords(clip_boxes(np.array(boxes), W, H))
    owner = np.array(owner)
    overlaps = iou_matrix(boxes, gt.boxes) if len(gt) else np.zeros((len(boxes), 0))
    quality = np.zeros(len(boxes))
    own = owner >= 0
    quality[own] = overlaps[own, owner[own]]
    if len(gt):
        quality[~own] = overlaps[~own].max(axis=1)
    conf = quantize_scores(_confidence(rng, p, quality, (~own).astype(np.float64)))
    order = np.argsort(-conf, kind="stable")
    return DetectionSet(gt.image_id, W, H, boxes[order], conf[order])


@dataclass(frozen=True, eq=False)
class CorpusImage:
    gt: GroundTruthImage
    features: np.ndarray
    detections: dict

    @property
    def image_id(self) -> str:
        return self.gt.image_id


@dataclass(frozen=True, eq=False)
class SyntheticCorpus:
    train: list
    validation: list
    personalities: tuple
    spec: SceneSpec = field(default_factory=SceneSpec)

    def detection_sets(self, split: str, personality: str) -> list[DetectionSet]:
        return [img.detections[personality] for img in getattr(self, split)]

    def ground_truth(self, split: str) -> list[GroundTruthImage]:
        return [img.gt for img in getattr(self, split)]


def _image_seed(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index), int(stream)]))


def build_corpus(
    n_images: int,
    spec: SceneSpec = SceneSpec(),
    personalities: Sequence[DetectorPersonality] = DEFAULT_PERSONALITIES,
    seed: int = 0,
    val_fraction: float = 0.2,
) -> SyntheticCorpus:
    """Deterministic corpus; the last ``val_fraction`` of images is the validation split."""
    if not personalities:
        raise InvalidInputError("at least one detector personality is required")
    names = [p.name for p in personalities]
    if len(set(names)) != len(names):
        raise InvalidInputError(f"personality names must be unique: {names}")
    images = []
    for i in range(int(n_images)):
        image_id = f"img_{i:05d}"
        scene = generate_scene(spec, _image_seed(seed, i, 0), image_id)
        dets = {}
        for k, p in enumerate(personalities):
            ds = run_personality(scene.gt, p, _image_seed(seed, i, k + 1), scene.distractors)
            dets[p.name] = assign_oracle(ds, scene.gt)
        images.append(CorpusImage(scene.gt, scene.features, dets))
    n_val = int(round(val_fraction * len(images)))
    split = len(images) - n_val
    return SyntheticCorpus(images[:split], images[split:], tuple(personalities), spec)


def coverage(corpus_images, personality: str, iou_threshold: float = 0.5) -> float:
    """Fraction of GT boxes reached by some detection with IoU >= threshold."""
    hit = total = 0
    for img in corpus_images:
        if len(img.gt) == 0:
            continue
        ds = img.detections[personality]
        total += len(img.gt)
        if len(ds):
            hit += int(np.sum(iou_matrix(ds.boxes, img.gt.boxes).max(axis=0) >= iou_threshold))
    return hit / total if total else float("nan")


def with_overrides(p: DetectorPersonality, **changes) -> DetectorPersonality:
    return replace(p, **changes)
