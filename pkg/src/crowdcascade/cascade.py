"""Detect, suppress, detect again.

The primary detector runs on the clean scene context. Instances it finds are
covered by binary masks on the feature pyramid (or the input image), and the
secondary detector runs on what is left. The output is the union of both
detection lists.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Protocol, Sequence, TextIO

import numpy as np

from .annotations import AnnotationSet, Instance
from .geometry import BBox, boxes_to_array, iou_matrix
from .masking import MaskMode, MaskTemplate, rasterize_mask, suppress, template_for
from .simulator import SceneContext, render_saliency
from .suppression import Detection, Source, greedy_match, greedy_nms, greedy_nms_indices

logger = logging.getLogger(__name__)


class Detector(Protocol):
    def detect(self, context: SceneContext) -> list[Detection]: ...


@dataclass(frozen=True)
class CascadeConfig:
    mask_mode: str = "exact"  # fullbox | humanoid | exact
    mask_on: str = "features"  # features | image
    mask_at: str = "gt"  # gt | detection
    p_score_threshold: float = 0.5
    match_iou: float = 0.5
    s_positive_iou: float = 0.6
    p_nms: float = 0.5
    s_nms: float = 0.5
    cross_module_nms: bool = False
    secondary_roi: str = "hrra"  # hrra | fpn

    def __post_init__(self) -> None:
        MaskMode(self.mask_mode)
        if self.mask_on not in ("features", "image"):
            raise ValueError(f"mask_on must be 'features' or 'image', got {self.mask_on!r}")
        if self.mask_at not in ("gt", "detection"):
            raise ValueError(f"mask_at must be 'gt' or 'detection', got {self.mask_at!r}")
        if self.secondary_roi not in ("hrra", "fpn"):
            raise ValueError(f"secondary_roi must be 'hrra' or 'fpn', got {self.secondary_roi!r}")
        for name in ("p_score_threshold", "match_iou", "s_positive_iou", "p_nms", "s_nms"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name}={v} outside (0, 1)")


@dataclass(frozen=True)
class GroundTruthPartition:
    detected: tuple[int, ...]
    missed: tuple[int, ...]
    # detection index (into the thresholded score order) -> claimed GT index
    claims: dict[int, int] = field(default_factory=dict)


def partition_targets(
    gt: AnnotationSet, p_dets: Sequence[Detection], match_iou: float = 0.5, score_threshold: float = 0.5
) -> GroundTruthPartition:
    """Split non-ignored ground truth into instances the primary pass found and those it missed.

    Detections at or above ``score_threshold`` are taken in descending score
    order (lower index first on ties); each claims the unclaimed non-ignored
    instance with the highest IoU, if that IoU reaches ``match_iou``.
    """
    for v in (match_iou, score_threshold):
        if not 0.0 < v < 1.0:
            raise ValueError(f"threshold {v} outside (0, 1)")
    valid = gt.valid_indices
    conf = [i for i, d in enumerate(p_dets) if d.score >= score_threshold]
    conf.sort(key=lambda i: (-p_dets[i].score, i))
    if not conf or not gt.instances:
        return GroundTruthPartition((), tuple(valid), {})
    eligible = np.array([not inst.ignore for inst in gt.instances])
    matched = greedy_match(
        boxes_to_array(p_dets[i].box for i in conf),
        boxes_to_array(inst.full for inst in gt.instances),
        match_iou,
        eligible,
    )
    claims = {conf[k]: int(j) for k, j in enumerate(matched) if j >= 0}
    hit = set(claims.values())
    return GroundTruthPartition(
        tuple(i for i in valid if i in hit), tuple(i for i in valid if i not in hit), claims
    )


def label_proposals(
    proposals: Sequence[BBox], targets: Sequence[Instance], positive_iou: float
) -> list[int | None]:
    """Target index for each positive proposal, ``None`` for negatives."""
    if not 0.0 < positive_iou < 1.0:
        raise ValueError(f"positive_iou {positive_iou} outside (0, 1)")
    if not proposals:
        return []
    if not targets:
        return [None] * len(proposals)
    m = iou_matrix(list(proposals), [t.full for t in targets])
    best = np.argmax(m, axis=1)  # first maximum, i.e. lowest target index
    return [int(j) if m[p, j] >= positive_iou else None for p, j in enumerate(best)]


@dataclass
class CascadeResult:
    primary: list[Detection]
    secondary: list[Detection]
    detections: list[Detection]
    partition: GroundTruthPartition | None
    masks: list[tuple[BBox, MaskTemplate]]
    cross_suppressed: int = 0
    suppressed_context: SceneContext | None = None


def _mask_template(cfg: CascadeConfig, context: SceneContext, gt_index: int | None, box: BBox) -> MaskTemplate:
    mode = MaskMode(cfg.mask_mode)
    if mode is not MaskMode.EXACT:
        return template_for(mode)
    scene = context.scene
    if gt_index is None and scene.instances:
        # exact mask for a detection: silhouette of the best-overlapping instance
        ov = iou_matrix([box], [inst.full for inst in scene.instances])[0]
        if ov.max() > 0:
            gt_index = int(np.argmax(ov))
    if gt_index is None:
        return template_for(MaskMode.HUMANOID)
    return scene.silhouettes[gt_index]


def mask_placements(
    context: SceneContext, p_dets: Sequence[Detection], cfg: CascadeConfig
) -> tuple[list[tuple[BBox, MaskTemplate]], GroundTruthPartition | None]:
    """Boxes and templates to suppress for the confident primary detections."""
    gt = context.scene.annotations()
    partition = None
    out = []
    if cfg.mask_at == "gt" and gt.instances:
        partition = partition_targets(gt, p_dets, cfg.match_iou, cfg.p_score_threshold)
        for j in partition.detected:
            box = gt.instances[j].full
            out.append((box, _mask_template(cfg, context, j, box)))
    else:
        if gt.instances:
            partition = partition_targets(gt, p_dets, cfg.match_iou, cfg.p_score_threshold)
        for d in p_dets:
            if d.score >= cfg.p_score_threshold:
                out.append((d.box, _mask_template(cfg, context, None, d.box)))
    return out, partition


def apply_masks(
    context: SceneContext, masks: Sequence[tuple[BBox, MaskTemplate]], mask_on: str = "features"
) -> SceneContext:
    """New context with the masked regions erased on every pyramid level."""
    if not masks:
        return context
    scene = context.scene
    if mask_on == "image":
        pix = context.image_mask.copy()
        for box, tpl in masks:
            pix |= rasterize_mask(box, tpl, pix.shape, 1)
        grids = {k: render_saliency(scene, context.pyramid.stride(k), pix) for k in context.grids}
        for k, g in grids.items():
            # keep feature-level suppression from earlier rounds
            grids[k] = suppress(g, context.cell_masks[k])
        return replace(context, grids=grids, image_mask=pix)
    grids = dict(context.grids)
    cells = {}
    for k, grid in context.grids.items():
        m = context.cell_masks[k].copy()
        for box, tpl in masks:
            m |= rasterize_mask(box, tpl, grid.shape2d, grid.stride)
        cells[k] = m
        grids[k] = suppress(grid, m)
    return replace(context, grids=grids, cell_masks=cells)


def tag(dets: Iterable[Detection], source: Source) -> list[Detection]:
    return [replace(d, source=source) for d in dets]


def single_pass(context: SceneContext, detector: Detector, nms_threshold: float = 0.5) -> list[Detection]:
    """Baseline: one detector pass followed by NMS."""
    return tag(greedy_nms(detector.detect(context), nms_threshold), Source.PRIMARY)


def run_cascade_detailed(
    context: SceneContext, primary: Detector, secondary: Detector, cfg: CascadeConfig
) -> CascadeResult:
    p = single_pass(context, primary, cfg.p_nms)
    masks, partition = mask_placements(context, p, cfg)
    masked = apply_masks(context, masks, cfg.mask_on)
    s = tag(greedy_nms(secondary.detect(masked), cfg.s_nms), Source.SECONDARY)
    union = p + s
    cross = 0
    if cfg.cross_module_nms and union:
        keep = greedy_nms_indices(
            boxes_to_array(d.box for d in union), np.array([d.score for d in union]), cfg.p_nms
        )
        cross = len(union) - len(keep)
        union = [union[i] for i in keep]
        logger.info("%s: cross-module NMS removed %d detections", context.scene.image_id, cross)
    return CascadeResult(p, s, union, partition, list(masks), cross, masked)


def run_cascade(
    context: SceneContext, primary: Detector, secondary: Detector, cfg: CascadeConfig
) -> list[Detection]:
    """Union of primary detections and secondary detections on the suppressed context."""
    return run_cascade_detailed(context, primary, secondary, cfg).detections


# -- detections JSON-lines ----------------------------------------------------


def detections_to_record(image_id: str, dets: Sequence[Detection]) -> dict:
    return {
        "image_id": image_id,
        "boxes": [[d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.score, d.source.value] for d in dets],
    }


def write_detections(per_image: dict[str, Sequence[Detection]], fh: TextIO) -> None:
    for image_id, dets in per_image.items():
        fh.write(json.dumps(detections_to_record(image_id, dets)) + "\n")


def read_detections(fh: Iterable[str]) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    for lineno, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            dets = [
                Detection(BBox(float(x1), float(y1), float(x2), float(y2)), float(sc), Source(src))
                for x1, y1, x2, y2, sc, src in rec["boxes"]
            ]
            out.setdefault(str(rec["image_id"]), []).extend(dets)
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"line {lineno}: bad detection record ({exc})") from None
    return out
