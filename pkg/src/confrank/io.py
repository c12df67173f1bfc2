"""Text formats for annotations and detection dumps, corpus export, run config.

Both text formats use the WiderFace layout: a path line, a count line, then
one record per line. Annotation records are ``x y w h`` followed by optional
integer attributes; detection records are ``x y w h score``. The path line is
used verbatim as the image id.

Coordinates are written with 2 decimals and scores with 6, so values that are
already on that grid (as produced by :mod:`confrank.synth`) survive a
write/parse cycle exactly. An image with count 0 has no record lines.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import DIFFICULTIES, DetectionSet, GroundTruthImage
from .net.network import RankerConfig
from .net.train import TrainSchedule
from .suppression import FusionConfig
from .synth import DEFAULT_PERSONALITIES, CorpusImage, DetectorPersonality, SceneSpec, SyntheticCorpus
from .validation import InvalidInputError, ParseError

COORD_DECIMALS = 2
SCORE_DECIMALS = 6


@dataclass(frozen=True)
class DifficultyTable:
    """Maps one integer attribute column of an annotation record to a difficulty.

    The default reads the first attribute as ``0/1/2 -> easy/medium/hard``,
    which is what :func:`export_corpus` writes. Boxes without the column, or
    with a value missing from ``levels``, get ``default``.
    """

    column: int = 0
    levels: tuple = ((0, "easy"), (1, "medium"), (2, "hard"))
    default: str = "hard"

    def __post_init__(self):
        for _, tag in self.levels:
            if tag not in DIFFICULTIES:
                raise InvalidInputError(f"unknown difficulty {tag!r}")
        if self.default not in DIFFICULTIES:
            raise InvalidInputError(f"unknown difficulty {self.default!r}")

    def lookup(self, attributes: Sequence[int]) -> str:
        if self.column >= len(attributes):
            return self.default
        return dict(self.levels).get(attributes[self.column], self.default)

    def code(self, tag: str) -> int:
        for value, name in self.levels:
            if name == tag:
                return value
        raise InvalidInputError(f"difficulty {tag!r} has no attribute code")


def _read_lines(path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def _blocks(path, lines):
    """Yield ``(path_line, [(line_no, record_text), ...])`` per image."""
    i = 0
    n = len(lines)
    while i < n:
        if not lines[i].strip():
            i += 1
            continue
        name = lines[i].strip()
        if i + 1 >= n:
            raise ParseError(path, i + 2, f"missing count line after {name!r}")
        raw = lines[i + 1].strip()
        try:
            count = int(raw)
        except ValueError:
            raise ParseError(path, i + 2, f"count must be an integer, got {raw!r}", 1) from None
        if count < 0:
            raise ParseError(path, i + 2, f"negative count {count}", 1)
        records = []
        for k in range(count):
            line_no = i + 3 + k
            if line_no > n or not lines[line_no - 1].strip():
                raise ParseError(path, line_no, f"{name!r} declares {count} records, found {k}")
            records.append((line_no, lines[line_no - 1]))
        yield name, records
        i += 2 + count


def _numbers(path, line_no, text, n_float, max_int):
    """Parse ``n_float`` floats then up to ``max_int`` integers; report the bad column."""
    tokens = text.split()
    if len(tokens) < n_float:
        raise ParseError(path, line_no, f"expected at least {n_float} fields, got {len(tokens)}")
    if len(tokens) > n_float + max_int:
        raise ParseError(path, line_no, f"expected at most {n_float + max_int} fields, got {len(tokens)}")
    col = 1
    values, attrs = [], []
    for j, tok in enumerate(tokens):
        col = text.index(tok, col - 1) + 1
        try:
            if j < n_float:
                v = float(tok)
                if not math.isfinite(v):
                    raise ValueError
                values.append(v)
            else:
                attrs.append(int(tok))
        except ValueError:
            kind = "number" if j < n_float else "integer attribute"
            raise ParseError(path, line_no, f"expected a {kind}, got {tok!r}", col) from None
        col += len(tok)
    return values, attrs


def parse_annotations(
    path, frame=(256.0, 256.0), table: DifficultyTable = DifficultyTable()
) -> list[GroundTruthImage]:
    """Read an annotation file. ``frame`` is the ``(width, height)`` of every image."""
    lines = _read_lines(path)
    out = []
    for name, records in _blocks(path, lines):
        boxes, tags = [], []
        for line_no, text in records:
            values, attrs = _numbers(path, line_no, text, 4, 32)
            if values[2] < 0 or values[3] < 0:
                raise ParseError(path, line_no, "box width and height must be non-negative")
            boxes.append(values)
            tags.append(table.lookup(attrs))
        out.append(GroundTruthImage(name, frame[0], frame[1], np.reshape(boxes, (-1, 4)), tuple(tags)))
    return out


def parse_detections(path, frame=(256.0, 256.0)) -> list[DetectionSet]:
    lines = _read_lines(path)
    out = []
    for name, records in _blocks(path, lines):
        rows = []
        for line_no, text in records:
            values, _ = _numbers(path, line_no, text, 5, 0)
            if values[2] < 0 or values[3] < 0:
                raise ParseError(path, line_no, "box width and height must be non-negative")
            if not 0.0 <= values[4] <= 1.0:
                raise ParseError(path, line_no, f"score {values[4]} outside [0, 1]")
            rows.append(values)
        arr = np.reshape(rows, (-1, 5))
        out.append(DetectionSet(name, frame[0], frame[1], arr[:, :4], arr[:, 4]))
    return out


def _fmt_box(box) -> str:
    return " ".join(f"{v:.{COORD_DECIMALS}f}" for v in box)


def format_annotations(gts: Sequence[GroundTruthImage], table: DifficultyTable = DifficultyTable()) -> str:
    parts = []
    for gt in gts:
        parts.append(f"{gt.image_id}\n{len(gt)}\n")
        for box, tag in zip(gt.boxes, gt.difficulty):
            parts.append(f"{_fmt_box(box)} {table.code(tag)}\n")
    return "".join(parts)


def format_detections(dets: Sequence[DetectionSet], score: str = "confidence") -> str:
    parts = []
    for ds in dets:
        values = ds.scores(score)
        parts.append(f"{ds.image_id}\n{len(ds)}\n")
        for box, s in zip(ds.boxes, values):
            parts.append(f"{_fmt_box(box)} {s:.{SCORE_DECIMALS}f}\n")
    return "".join(parts)


def _write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_annotations(path, gts, table: DifficultyTable = DifficultyTable()) -> None:
    _write_text(path, format_annotations(gts, table))


def write_detections(path, dets, score: str = "confidence") -> None:
    _write_text(path, format_detections(dets, score))


# -- corpus directories ------------------------------------------------------

SPLITS = ("train", "validation")


def feature_path(split_dir, image_id: str) -> Path:
    return Path(split_dir) / "features" / f"{image_id}.npy"


def load_features(split_dir, image_ids: Sequence[str]) -> list[np.ndarray]:
    out = []
    for image_id in image_ids:
        path = feature_path(split_dir, image_id)
        if not path.is_file():
            raise FileNotFoundError(f"no feature array for image {image_id!r}: {path}")
        out.append(np.load(path, allow_pickle=False))
    return out


def export_corpus(corpus: SyntheticCorpus, root) -> None:
    """Write ``<root>/<split>/{annotations.txt, dets_<name>.txt, features/*.npy}``."""
    root = Path(root)
    for split in SPLITS:
        images = getattr(corpus, split)
        split_dir = root / split
        write_annotations(split_dir / "annotations.txt", [img.gt for img in images])
        for p in corpus.personalities:
            write_detections(split_dir / f"dets_{p.name}.txt", corpus.detection_sets(split, p.name))
        for img in images:
            path = feature_path(split_dir, img.image_id)
            path.parent.mkdir(parents=True, exist_ok=True)
            np.save(path, img.features, allow_pickle=False)


def personality_names(split_dir) -> list[str]:
    names = sorted(p.name[5:-4] for p in Path(split_dir).glob("dets_*.txt"))
    if not names:
        raise FileNotFoundError(f"no detection dumps (dets_*.txt) in {split_dir}")
    return names


def load_corpus(root, frame=(256.0, 256.0)) -> SyntheticCorpus:
    """Read a corpus directory written by :func:`export_corpus`; oracles are reassigned."""
    from .oracle import assign_oracle

    root = Path(root)
    splits = {}
    names = personality_names(root / "train")
    for split in SPLITS:
        split_dir = root / split
        gts = parse_annotations(split_dir / "annotations.txt", frame)
        feats = load_features(split_dir, [g.image_id for g in gts])
        dets = {}
        for name in names:
            by_id = {d.image_id: d for d in parse_detections(split_dir / f"dets_{name}.txt", frame)}
            dets[name] = by_id
        images = []
        for gt, f in zip(gts, feats):
            per = {}
            for name in names:
                ds = dets[name].get(gt.image_id, DetectionSet.empty(gt.image_id, *frame))
                per[name] = assign_oracle(ds, gt)
            images.append(CorpusImage(gt, f, per))
        splits[split] = images
    personalities = tuple(DetectorPersonality(name=n) for n in names)
    return SyntheticCorpus(splits["train"], splits["validation"], personalities)


# -- run configuration --------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a pipeline run, serialised as one JSON document.

    Defaults follow the reference setup except ``capacity_n`` (64 instead of
    5000) and the ranker size, which are desk-scale.
    """

    capacity_n: int = 64
    n_pairs: int = 10
    loss: str = "rank"
    nms_iou: float = 0.4
    voting_iou: float = 0.4
    match_iou: float = 0.5
    scales: tuple = (500, 800, 1100, 1400, 1700)
    batch_size: int = 32
    iterations: int = 100_000
    lr_start: float = 1e-3
    lr_end: float = 1e-6
    seed: int = 0
    log_every: int = 50
    mirror: bool = True
    frame: tuple = (256.0, 256.0)
    ranker: dict = field(default_factory=dict)
    n_images: int = 500
    val_fraction: float = 0.2
    scene: dict = field(default_factory=dict)
    personalities: tuple = ()

    def __post_init__(self):
        self.schedule()
        self.ranker_config()
        self.fusion_config()
        self.scene_spec()
        self.detector_personalities()

    def ranker_config(self) -> RankerConfig:
        try:
            return RankerConfig(capacity_n=self.capacity_n, **self.ranker)
        except TypeError as exc:
            raise InvalidInputError(f"bad ranker section: {exc}") from None

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(
            batch_size=self.batch_size, iterations=self.iterations, lr_start=self.lr_start,
            lr_end=self.lr_end, seed=self.seed, log_every=self.log_every, mirror=self.mirror,
            loss=self.loss, n_pairs=self.n_pairs,
        )

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(nms_iou=self.nms_iou, voting_iou=self.voting_iou, scales=tuple(self.scales))

    def scene_spec(self) -> SceneSpec:
        try:
            spec = {k: tuple(v) if isinstance(v, list) else v for k, v in self.scene.items()}
            return SceneSpec(image_width=self.frame[0], image_height=self.frame[1], **spec)
        except TypeError as exc:
            raise InvalidInputError(f"bad scene section: {exc}") from None

    def detector_personalities(self) -> tuple:
        if not self.personalities:
            return DEFAULT_PERSONALITIES
        try:
            return tuple(
                DetectorPersonality(**{k: tuple(v) if isinstance(v, list) else v for k, v in p.items()})
                for p in self.personalities
            )
        except TypeError as exc:
            raise InvalidInputError(f"bad personality entry: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidInputError(f"unknown config keys: {', '.join(unknown)}")
        data = dict(data)
        for key in ("scales", "frame", "personalities"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = "\n".join(_read_lines(path))
        try:
            data = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.lineno, exc.msg, exc.colno) from None
        if not isinstance(data, dict):
            raise ParseError(path, 1, "config must be a JSON object")
        return cls.from_dict(data)

    def with_overrides(self, assignments: Sequence[str]) -> "RunConfig":
        """Apply ``key=value`` strings; values are JSON, dotted keys reach into dict sections."""
        data = asdict(self)
        for item in assignments:
            key, sep, raw = item.partition("=")
            if not sep or not key:
                raise InvalidInputError(f"override must look like key=value, got {item!r}")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            head, _, rest = key.partition(".")
            if head not in data:
                raise InvalidInputError(f"unknown config key {head!r}")
            if rest:
                if not isinstance(data[head], dict):
                    raise InvalidInputError(f"config key {head!r} has no sub-keys")
                data[head] = {**data[head], rest: value}
            else:
                data[head] = value
        return RunConfig.from_dict(data)


def save_config(path, config: RunConfig) -> None:
    _write_text(path, config.to_json())


def write_history(path, history) -> None:
    _write_text(path, "".join(f"{it} {loss:.8f}\n" for it, loss in history))


__all__ = [
    "COORD_DECIMALS", "SCORE_DECIMALS", "DifficultyTable", "RunConfig",
    "export_corpus", "feature_path", "format_annotations", "format_detections",
    "load_corpus", "load_features", "parse_annotations", "parse_detections",
    "save_config", "write_annotations", "write_detections", "write_history",
]
