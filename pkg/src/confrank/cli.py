"""Command-line entry point: ``confrank <subcommand> ...``.

Every subcommand accepts ``--config run.json`` and repeated ``--set key=value``
overrides. Failures print a single line to stderr of the form
``confrank: error: code=<code> message=<text>`` and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ablation, checkpoint
from .evaluation import evaluate, report_summary, write_pr_curve
from .geometry import DIFFICULTIES
from .io import (
    RunConfig, export_corpus, load_corpus, load_features, parse_annotations, parse_detections,
    save_config, write_detections, write_history,
)
from .net.network import RankerNetwork
from .net.train import predict_refined, train
from .oracle import oracle_rescore
from .suppression import multiscale_fuse
from .synth import build_corpus
from .validation import InvalidInputError, ParseError

EXIT_CODES = {"usage": 2, "missing-file": 3, "format": 4, "invalid-input": 5, "internal": 1}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.with_overrides(args.set or [])


def _frame(cfg: RunConfig):
    return tuple(float(v) for v in cfg.frame)


def cmd_synth(args, cfg: RunConfig) -> None:
    corpus = build_corpus(
        cfg.n_images, cfg.scene_spec(), cfg.detector_personalities(), cfg.seed, cfg.val_fraction
    )
    out = Path(args.out)
    export_corpus(corpus, out)
    save_config(out / "config.json", cfg)
    print(f"wrote {len(corpus.train)} train / {len(corpus.validation)} validation images to {out}")


def _ap_line(name, report) -> str:
    cells = [f"{b}={'nan' if v is None else f'{v:.4f}'}" for b, v in report.as_dict().items()]
    return f"{name} " + " ".join(cells)


def cmd_oracle_eval(args, cfg: RunConfig) -> None:
    frame = _frame(cfg)
    gts = parse_annotations(args.annotations, frame)
    dets = parse_detections(args.dets, frame)
    gt_by_id = {g.image_id: g for g in gts}
    missing = [d.image_id for d in dets if d.image_id not in gt_by_id]
    if missing:
        raise InvalidInputError(f"detections for unannotated image {missing[0]!r}")
    raw = evaluate(dets, gts, "confidence", cfg.nms_iou, cfg.match_iou)
    rescored = [oracle_rescore(d, gt_by_id[d.image_id]) for d in dets]
    orc = evaluate(rescored, gts, "refined", cfg.nms_iou, cfg.match_iou)
    print(_ap_line("raw", raw))
    print(_ap_line("oracle", orc))
    if args.out:
        payload = {"raw": raw.as_dict(), "oracle": orc.as_dict()}
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_train(args, cfg: RunConfig) -> None:
    corpus = load_corpus(args.corpus, _frame(cfg))
    samples = ablation.training_samples(corpus)
    net = RankerNetwork(cfg.ranker_config(), cfg.seed)
    if cfg.iterations > 0:
        net, history = train(net, samples, cfg.schedule())
    else:
        history = []
    checkpoint.save(args.out, net, {"loss": cfg.loss, "n_pairs": cfg.n_pairs, "iterations": cfg.iterations})
    if args.history:
        write_history(args.history, history)
    tail = f", final loss {history[-1][1]:.6f}" if history else ""
    print(f"trained {cfg.iterations} iterations{tail}; checkpoint {args.out}")


def cmd_rerank(args, cfg: RunConfig) -> None:
    net, _ = checkpoint.load(args.checkpoint)
    dets = parse_detections(args.dets, _frame(cfg))
    feats = load_features(args.features, [d.image_id for d in dets])
    refined = predict_refined(net, list(zip(feats, dets)))
    out = []
    dropped = 0
    for ds, scores in zip(dets, refined):
        keep = np.flatnonzero(~np.isnan(scores))
        dropped += len(ds) - keep.size
        out.append(ds.subset(keep).replace(refined=scores[keep]))
    write_detections(args.out, out, "refined")
    note = f" ({dropped} detections past capacity dropped)" if dropped else ""
    print(f"reranked {len(out)} images{note}; wrote {args.out}")


def cmd_ablate(args, cfg: RunConfig) -> None:
    corpus = load_corpus(args.corpus, _frame(cfg))
    rcfg, schedule = cfg.ranker_config(), cfg.schedule()
    tables = {"baselines": ablation.baseline_rows(corpus)}
    if args.grid in ("loss", "all"):
        tables["loss"] = ablation.loss_grid(corpus, rcfg, schedule)
    if args.grid in ("pairs", "all"):
        counts = [int(v) for v in args.pairs.split(",")] if args.pairs else ablation.PAIR_GRID
        tables["pairs"] = ablation.pair_grid(corpus, rcfg, schedule, counts)
    text = "".join(ablation.format_table(name, rows) + "\n" for name, rows in tables.items())
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.txt").write_text(text)
        (out / "ablation.json").write_text(ablation.report_json(tables))


def cmd_fuse(args, cfg: RunConfig) -> None:
    frame = _frame(cfg)
    per_dump = [{d.image_id: d for d in parse_detections(p, frame)} for p in args.dets]
    ids = []
    for dump in per_dump:
        ids.extend(i for i in dump if i not in ids)
    fused = []
    for image_id in ids:
        sets = [dump[image_id] for dump in per_dump if image_id in dump]
        fused.append(multiscale_fuse(sets, cfg.fusion_config()))
    write_detections(args.out, fused)
    print(f"fused {len(args.dets)} dumps over {len(fused)} images; wrote {args.out}")


def cmd_eval(args, cfg: RunConfig) -> None:
    frame = _frame(cfg)
    gts = parse_annotations(args.annotations, frame)
    dets = parse_detections(args.dets, frame)
    report = evaluate(dets, gts, "confidence", cfg.nms_iou, cfg.match_iou)
    for bucket in DIFFICULTIES:
        value = report.as_dict()[bucket]
        print(f"AP {bucket} {'nan' if value is None else f'{value:.4f}'}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report_summary(report, detections=str(args.dets)))
        for bucket, curve in report.curves.items():
            write_pr_curve(out / f"pr_{bucket}.txt", curve)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="confrank", description="Pairwise re-ranking of detection confidences.")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="run configuration (JSON)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate and export a synthetic corpus")
    p.add_argument("--out", required=True, help="corpus directory")

    p = add("oracle-eval", cmd_oracle_eval, "AP of raw vs oracle-rescored detections")
    p.add_argument("--annotations", required=True)
    p.add_argument("--dets", required=True)
    p.add_argument("--out", help="JSON report")

    p = add("train", cmd_train, "train the ranker on a corpus directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint file")
    p.add_argument("--history", help="loss history text file")

    p = add("rerank", cmd_rerank, "apply a checkpoint to a detection dump")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dets", required=True)
    p.add_argument("--features", required=True, help="directory holding features/<image_id>.npy")
    p.add_argument("--out", required=True)

    p = add("ablate", cmd_ablate, "loss-function and pair-count comparison grids")
    p.add_argument("--corpus", required=True)
    p.add_argument("--grid", choices=("loss", "pairs", "all"), default="all")
    p.add_argument("--pairs", help="comma-separated pair counts (default 1,2,10,100)")
    p.add_argument("--out", help="output directory for ablation.txt / ablation.json")

    p = add("fuse", cmd_fuse, "multi-scale fusion of detection dumps with box voting")
    p.add_argument("--dets", required=True, nargs="+")
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "AP report and PR curves for a detection dump")
    p.add_argument("--annotations", required=True)
    p.add_argument("--dets", required=True)
    p.add_argument("--out", help="output directory for report.json and pr_<bucket>.txt")
    return parser


def _fail(code: str, message: str) -> int:
    text = " ".join(str(message).split())
    print(f"confrank: error: code={code} message={text}", file=sys.stderr)
    return EXIT_CODES[code]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc)
    try:
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
        cfg = _load_config(args)
        args.func(args, cfg)
    except FileNotFoundError as exc:
        return _fail("missing-file", exc)
    except ParseError as exc:
        return _fail("format", exc)
    except (InvalidInputError, ValueError) as exc:
        return _fail("invalid-input", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
