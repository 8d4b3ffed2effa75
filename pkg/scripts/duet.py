"""Baseline vs cascade on the two duet presets."""

import argparse

from crowdcascade.config import RunConfig, load_config
from crowdcascade.cascade import run_cascade_detailed, single_pass
from crowdcascade.evaluation import average_precision, recall_at_all
from crowdcascade.geometry import iou
from crowdcascade.pipeline import detectors
from crowdcascade.simulator import SceneContext, duet_scene, visible_fraction


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="run config JSON (defaults apply when omitted)")
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else RunConfig()
    primary, secondary = detectors(cfg)
    print("preset      IoU    V(back)  base_recall  casc_recall  base_AP  casc_AP")
    for high in (False, True):
        scene = duet_scene(high_overlap=high)
        ctx = SceneContext.build(scene, cfg.pyramid)
        gts = [scene.annotations()]
        base = {scene.image_id: single_pass(ctx, primary, cfg.cascade.p_nms)}
        res = run_cascade_detailed(ctx, primary, secondary, cfg.cascade)
        casc = {scene.image_id: res.detections}
        a, b = (inst.full for inst in scene.instances)
        print(
            f"{'duet-high' if high else 'duet':<10} {iou(a, b):.3f}  {visible_fraction(0, scene):.3f}"
            f"    {recall_at_all(base, gts):.3f}        {recall_at_all(casc, gts):.3f}"
            f"        {average_precision(base, gts):.3f}    {average_precision(casc, gts):.3f}"
        )


if __name__ == "__main__":
    main()
