"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from .annotations import AnnotationError, ParseStats, load_annotations, overlap_report
from .cascade import read_detections, write_detections
from .config import ConfigError, RunConfig, load_config
from .evaluation import evaluate, write_plot_data
from .pipeline import StageError, run_pipeline, run_scenes
from .simulator import generate_scenes, read_scenes, write_scenes
from .suppression import gt_nms_recall_bound_details

EXIT_USAGE = 1
EXIT_DATA = 2

logger = logging.getLogger("crowdcascade")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load_sets(paths):
    sets = []
    stats = ParseStats()
    for p in paths:
        sets.extend(load_annotations(p, stats))
    return sets


def _with_overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    for flag, key in (("mask_mode", "mask_mode"), ("mask_on", "mask_on"), ("mask_at", "mask_at")):
        val = getattr(args, flag, None)
        if val is not None:
            changes[key] = val
    if getattr(args, "cross_module_nms", False):
        changes["cross_module_nms"] = True
    if not changes:
        return cfg
    return dataclasses.replace(cfg, cascade=dataclasses.replace(cfg.cascade, **changes))


def cmd_stats(args) -> int:
    sets = _load_sets(args.annotations)
    if not sets:
        raise AnnotationError("no annotation records found")
    values = overlap_report(sets, args.thresholds)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["threshold", "pairs_per_image"])
    for t, v in zip(args.thresholds, values):
        w.writerow([t, v])
    return 0


def cmd_nms_bound(args) -> int:
    sets = _load_sets([args.annotations])
    res = gt_nms_recall_bound_details(sets, args.iou)
    print(res.recall)
    dist = Counter(res.suppressed_per_image.values())
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["suppressed", "images"])
    for k in sorted(dist):
        w.writerow([k, dist[k]])
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    n = args.scenes if args.scenes is not None else cfg.scenes
    seed = args.seed if args.seed is not None else cfg.seed
    scenes = generate_scenes(cfg.simulator, n, seed)
    with open(args.out, "w") as fh:
        write_scenes(scenes, fh)
    dropped = sum(s.dropped for s in scenes)
    if dropped:
        logger.warning("%d instances could not be placed", dropped)
    return 0


def cmd_run_cascade(args) -> int:
    cfg = _with_overrides(load_config(args.config), args)
    with open(args.scenes) as fh:
        scenes = read_scenes(fh)
    runs = run_scenes(scenes, cfg)
    with open(args.out, "w") as fh:
        write_detections({k: r.cascade.detections for k, r in runs.items()}, fh)
    if args.baseline_out:
        with open(args.baseline_out, "w") as fh:
            write_detections({k: r.baseline for k, r in runs.items()}, fh)
    cross = sum(r.cascade.cross_suppressed for r in runs.values())
    if cfg.cascade.cross_module_nms:
        logger.info("cross-module NMS removed %d detections", cross)
    return 0


def cmd_evaluate(args) -> int:
    with open(args.detections) as fh:
        dets = read_detections(fh)
    gts = _load_sets([args.annotations])
    known = {g.image_id for g in gts}
    extra = sorted(set(dets) - known)
    if extra:
        raise AnnotationError(f"detections for unknown images: {extra[:5]}")
    ev = evaluate(dets, gts, iou=args.iou)
    text = json.dumps(ev.report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    if args.plots:
        write_plot_data(ev, args.plots)
    return 0


def cmd_pipeline(args) -> int:
    cfg = _with_overrides(load_config(args.config), args)
    report = run_pipeline(cfg, args.out_dir)
    b, c = report["baseline"], report["cascade"]
    print(f"baseline: AP={b['ap']:.4f} recall={b['recall']:.4f} mMR={b['mmr']:.4f}")
    print(f"cascade:  AP={c['ap']:.4f} recall={c['recall']:.4f} mMR={c['mmr']:.4f}")
    return 0


def _add_mask_flags(p):
    p.add_argument("--mask-mode", choices=["fullbox", "humanoid", "exact"])
    p.add_argument("--mask-on", choices=["features", "image"])
    p.add_argument("--mask-at", choices=["gt", "detection"])
    p.add_argument("--cross-module-nms", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crowdcascade", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="pairwise-overlap statistics of annotation files")
    p.add_argument("--annotations", nargs="+", required=True)
    p.add_argument("--thresholds", type=_floats, default=[0.3, 0.4, 0.5, 0.6])
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("nms-bound", help="recall of ground truth pushed through NMS")
    p.add_argument("--annotations", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(func=cmd_nms_bound)

    p = sub.add_parser("simulate", help="generate synthetic crowded scenes")
    p.add_argument("--config")
    p.add_argument("--scenes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run-cascade", help="run baseline and cascade on a scenes file")
    p.add_argument("--scenes", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--baseline-out")
    _add_mask_flags(p)
    p.set_defaults(func=cmd_run_cascade)

    p = sub.add_parser("evaluate", help="AP, recall, mMR and breakdowns")
    p.add_argument("--detections", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--report")
    p.add_argument("--plots")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="simulate, run and evaluate in one go")
    p.add_argument("--config")
    p.add_argument("--out-dir")
    _add_mask_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AnnotationError, ValueError, KeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
