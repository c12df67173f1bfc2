"""Loss-function and pair-count comparison grids.

Each grid point trains a fresh ranker with the same seed, data and budget and
scores it on the validation split. AP is the hard-bucket AP, averaged over the
detector personalities of the corpus; tau is the mean per-image Kendall tau
between refined and oracle confidences.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .evaluation import evaluate, mean_kendall_tau
from .net.data import Sample
from .net.network import RankerConfig, RankerNetwork
from .net.train import TrainSchedule, predict_refined, train
from .oracle import oracle_rescore
from .ranking import LOSSES
from .synth import SyntheticCorpus

log = logging.getLogger(__name__)

LOSS_GRID = ("rank", "l1", "l2", "smooth_l1", "cross_entropy")
PAIR_GRID = (1, 2, 10, 100)


@dataclass(frozen=True)
class AblationRow:
    label: str
    loss: str
    n_pairs: int
    ap: float
    tau: float
    ap_by_detector: dict
    tau_by_detector: dict


def training_samples(corpus: SyntheticCorpus) -> list[Sample]:
    return [Sample(img.features, tuple(img.detections.values())) for img in corpus.train]


def validation_scores(net: RankerNetwork | None, corpus: SyntheticCorpus, mode: str = "refined"):
    """Per-personality ``(AP, tau)`` on validation.

    ``mode`` is ``"refined"`` (needs ``net``), ``"raw"`` or ``"oracle"``.
    """
    gts = corpus.ground_truth("validation")
    aps, taus = {}, {}
    for p in corpus.personalities:
        dets = corpus.detection_sets("validation", p.name)
        if mode == "raw":
            scored = [d.replace(refined=d.confidence) for d in dets]
        elif mode == "oracle":
            scored = [oracle_rescore(d, g) for d, g in zip(dets, gts)]
        else:
            refined = predict_refined(net, [(img.features, d) for img, d in zip(corpus.validation, dets)])
            scored = [
                d.subset(np.flatnonzero(~np.isnan(r))).replace(refined=r[~np.isnan(r)])
                for d, r in zip(dets, refined)
            ]
        aps[p.name] = evaluate(scored, gts, "refined").ap_hard
        taus[p.name] = mean_kendall_tau(scored, "refined")
    return aps, taus


def _row(label, loss, n_pairs, aps, taus) -> AblationRow:
    return AblationRow(
        label, loss, n_pairs, float(np.mean(list(aps.values()))),
        float(np.nanmean(list(taus.values()))), aps, taus,
    )


def baseline_rows(corpus: SyntheticCorpus) -> list[AblationRow]:
    return [_row(mode, "-", 0, *validation_scores(None, corpus, mode)) for mode in ("raw", "oracle")]


def train_and_score(corpus, config: RankerConfig, schedule: TrainSchedule, label: str) -> AblationRow:
    net = RankerNetwork(config, schedule.seed)
    net, _ = train(net, training_samples(corpus), schedule)
    row = _row(label, schedule.loss, schedule.n_pairs, *validation_scores(net, corpus))
    log.info("%s: ap=%.4f tau=%.4f", label, row.ap, row.tau)
    return row


def loss_grid(corpus, config, schedule, losses: Sequence[str] = LOSS_GRID) -> list[AblationRow]:
    rows = []
    for loss in losses:
        if loss not in LOSSES:
            raise ValueError(f"unknown loss {loss!r}")
        rows.append(train_and_score(corpus, config, replace(schedule, loss=loss), loss))
    return rows


def pair_grid(corpus, config, schedule, counts: Sequence[int] = PAIR_GRID) -> list[AblationRow]:
    return [
        train_and_score(corpus, config, replace(schedule, loss="rank", n_pairs=int(n)), f"n={n}")
        for n in counts
    ]


def format_table(title: str, rows: Sequence[AblationRow]) -> str:
    names = sorted({k for r in rows for k in r.ap_by_detector})
    head = ["setting", "AP", "tau"] + [f"AP[{n}]" for n in names]
    body = [[r.label, f"{r.ap:.4f}", f"{r.tau:.4f}"] + [f"{r.ap_by_detector[n]:.4f}" for n in names] for r in rows]
    first = max(len(c[0]) for c in [head] + body)
    lines = [title]
    for cells in [head] + body:
        lines.append("  ".join([f"{cells[0]:<{first}}"] + [f"{c:>12}" for c in cells[1:]]))
    return "\n".join(lines) + "\n"


def report_json(tables: dict) -> str:
    payload = {name: [asdict(r) for r in rows] for name, rows in tables.items()}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
