"""Ablations on simulated crowds: mask shape and placement, secondary RoI level,
cross-module NMS, and the positive-proposal IoU knob."""

import argparse
import dataclasses
import itertools

import numpy as np

from crowdcascade.cascade import label_proposals
from crowdcascade.config import RunConfig, load_config
from crowdcascade.evaluation import evaluate
from crowdcascade.pipeline import run_scenes
from crowdcascade.simulator import generate_scenes


def _row(name, cfg, scenes, gts):
    runs = run_scenes(scenes, cfg)
    r = evaluate({k: v.cascade.detections for k, v in runs.items()}, gts).report
    sec = sum(len(v.cascade.secondary) for v in runs.values())
    cross = sum(v.cascade.cross_suppressed for v in runs.values())
    print(f"{name:<42} AP {r.ap:.4f}  recall {r.recall:.4f}  mMR {r.mmr:.4f}  FP {r.fp:>4}  secondary {sec:>4}  cross {cross:>3}")
    return runs


def _with(cfg, **cascade):
    return dataclasses.replace(cfg, cascade=dataclasses.replace(cfg.cascade, **cascade))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--scenes", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else RunConfig()
    scenes = generate_scenes(cfg.simulator, args.scenes, args.seed)
    gts = [s.annotations() for s in scenes]

    runs = run_scenes(scenes, cfg)
    r = evaluate({k: v.baseline for k, v in runs.items()}, gts).report
    print(f"{'baseline (single pass)':<42} AP {r.ap:.4f}  recall {r.recall:.4f}  mMR {r.mmr:.4f}  FP {r.fp:>4}")

    print("\n-- mask shape x placement")
    for mode, at, on in itertools.product(("fullbox", "humanoid", "exact"), ("gt", "detection"), ("features", "image")):
        _row(f"mask={mode} at={at} on={on}", _with(cfg, mask_mode=mode, mask_at=at, mask_on=on), scenes, gts)

    print("\n-- secondary RoI level")
    for level in ("hrra", "fpn"):
        _row(f"secondary_roi={level}", _with(cfg, secondary_roi=level), scenes, gts)

    print("\n-- cross-module NMS")
    for flag in (False, True):
        _row(f"cross_module_nms={flag}", _with(cfg, cross_module_nms=flag), scenes, gts)

    print("\n-- positive-proposal IoU (secondary training targets)")
    rng = np.random.default_rng(args.seed)
    for t in (0.5, 0.6, 0.7):
        pos = total = 0
        for s in scenes:
            targets = list(s.instances)
            props = [
                inst.full.shifted(float(dx), float(dy))
                for inst in targets
                for dx, dy in rng.normal(0, 0.15 * inst.full.width, (8, 2))
            ]
            labels = label_proposals(props, targets, t)
            pos += sum(x is not None for x in labels)
            total += len(labels)
        print(f"s_positive_iou={t}: {pos}/{total} positive proposals ({pos / total:.3f})")


if __name__ == "__main__":
    main()
