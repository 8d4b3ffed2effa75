"""Greedy NMS, Soft-NMS and the ground-truth-through-NMS recall ceiling."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .annotations import AnnotationSet
from .geometry import BBox, boxes_to_array, iou_matrix


class Source(str, enum.Enum):
    PRIMARY = "primary"
    SECONDARY = "secondary"


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float
    source: Source = Source.PRIMARY
    matched_gt: int | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0) or math.isnan(self.score):
            raise ValueError(f"score {self.score} outside [0, 1]")
        object.__setattr__(self, "source", Source(self.source))


def _score_order(scores: np.ndarray) -> np.ndarray:
    # stable sort keeps lower original index first on ties
    return np.argsort(-scores, kind="stable")


def greedy_nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> list[int]:
    """Indices kept by greedy NMS, in keep order (descending score)."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold {iou_threshold} outside (0, 1]")
    n = len(scores)
    if n == 0:
        return []
    order = _score_order(np.asarray(scores, dtype=np.float64))
    ious = iou_matrix(boxes, boxes)
    alive = np.ones(n, dtype=bool)
    keep = []
    for i in order:
        if not alive[i]:
            continue
        keep.append(int(i))
        alive &= ~(ious[i] > iou_threshold)
    return keep


def greedy_nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    if not dets:
        if not 0.0 < iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold {iou_threshold} outside (0, 1]")
        return []
    boxes = boxes_to_array(d.box for d in dets)
    scores = np.array([d.score for d in dets])
    return [dets[i] for i in greedy_nms_indices(boxes, scores, iou_threshold)]


def soft_nms(
    dets: Sequence[Detection],
    mode: str = "linear",
    iou_threshold: float = 0.3,
    sigma: float = 0.5,
    score_floor: float = 0.001,
) -> list[Detection]:
    """Soft-NMS rescoring.

    ``mode="linear"`` multiplies an overlapping detection's score by
    ``1 - iou`` once ``iou > iou_threshold``; ``mode="gaussian"`` multiplies
    every remaining score by ``exp(-iou**2 / sigma)``. Detections decayed
    below ``score_floor`` are dropped. Returns rescored copies sorted by final
    score, descending.
    """
    mode = mode.lower()
    if mode not in ("linear", "gaussian"):
        raise ValueError(f"unknown soft-NMS mode {mode!r}")
    if mode == "gaussian" and sigma <= 0:
        raise ValueError("sigma must be positive")
    if mode == "linear" and not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold {iou_threshold} outside (0, 1]")
    if not dets:
        return []

    boxes = boxes_to_array(d.box for d in dets)
    ious = iou_matrix(boxes, boxes)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    remaining = list(range(len(dets)))
    picked: list[tuple[int, float]] = []
    while remaining:
        # max score, lowest index on ties
        best = max(remaining, key=lambda k: (scores[k], -k))
        remaining.remove(best)
        picked.append((best, float(scores[best])))
        survivors = []
        for k in remaining:
            ov = ious[best, k]
            if mode == "linear":
                if ov > iou_threshold:
                    scores[k] *= 1.0 - ov
            else:
                scores[k] *= math.exp(-(ov * ov) / sigma)
            if scores[k] >= score_floor:
                survivors.append(k)
        remaining = survivors

    picked.sort(key=lambda p: (-p[1], p[0]))
    return [replace(dets[k], score=s) for k, s in picked]


def greedy_match(
    pred: np.ndarray,
    gt: np.ndarray,
    iou_threshold: float,
    gt_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Greedy one-to-one matching in the given prediction order.

    Each prediction claims the unclaimed eligible ground truth with the highest
    IoU (lowest index on ties) provided that IoU is at least ``iou_threshold``.
    Returns the matched ground-truth index per prediction, or -1.
    """
    out = np.full(len(pred), -1, dtype=np.int64)
    if len(pred) == 0 or len(gt) == 0:
        return out
    ious = iou_matrix(pred, gt)
    free = np.ones(len(gt), dtype=bool) if gt_mask is None else np.asarray(gt_mask, dtype=bool).copy()
    for p in range(len(pred)):
        cand = np.where(free, ious[p], -1.0)
        j = int(np.argmax(cand))
        if cand[j] >= iou_threshold:
            out[p] = j
            free[j] = False
    return out


@dataclass(frozen=True)
class NmsBoundResult:
    recall: float
    matched: int
    total: int
    suppressed_per_image: dict[str, int]


def gt_nms_recall_bound_details(
    sets: Sequence[AnnotationSet], iou_threshold: float, match_iou: float = 0.5
) -> NmsBoundResult:
    total = 0
    matched = 0
    suppressed: dict[str, int] = {}
    for aset in sets:
        gts = boxes_to_array(i.full for i in aset.valid_instances)
        n = len(gts)
        total += n
        if n == 0:
            suppressed[aset.image_id] = 0
            continue
        keep = greedy_nms_indices(gts, np.ones(n), iou_threshold)
        suppressed[aset.image_id] = n - len(keep)
        m = greedy_match(gts[keep], gts, match_iou)
        matched += int(np.count_nonzero(m >= 0))
    if total == 0:
        raise ValueError("no non-ignored instances")
    return NmsBoundResult(matched / total, matched, total, suppressed)


def gt_nms_recall_bound(sets: Sequence[AnnotationSet], iou_threshold: float) -> float:
    """Recall reachable when perfect ground-truth boxes (all scored 1.0) pass through NMS.

    NMS order is the annotation order; survivors are matched one-to-one to
    ground truth at IoU >= 0.5.
    """
    return gt_nms_recall_bound_details(sets, iou_threshold).recall
