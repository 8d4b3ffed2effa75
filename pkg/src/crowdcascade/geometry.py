"""Axis-aligned bounding-box arithmetic.

Boxes are corner-form ``(x1, y1, x2, y2)`` in continuous pixel coordinates.
Datasets that store ``(x, y, w, h)`` are converted at the ingestion boundary
with :meth:`BBox.from_xywh`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates: {coords}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box (non-positive width or height): {coords}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    def to_xywh(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def shifted(self, dx: float = 0.0, dy: float = 0.0) -> "BBox":
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


def area(b: BBox) -> float:
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def intersection(a: BBox, b: BBox) -> float:
    """Area of the open intersection; touching edges give 0."""
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    if a == b:
        return 1.0
    inter = intersection(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def boxes_to_array(boxes: Iterable[BBox]) -> np.ndarray:
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def iou_matrix(a: Sequence[BBox] | np.ndarray, b: Sequence[BBox] | np.ndarray) -> np.ndarray:
    """Pairwise IoU between two box collections, shape ``(len(a), len(b))``.

    Agrees with :func:`iou` elementwise, including the exact 1.0 on
    identical boxes.
    """
    A = a if isinstance(a, np.ndarray) else boxes_to_array(a)
    B = b if isinstance(b, np.ndarray) else boxes_to_array(b)
    if len(A) == 0 or len(B) == 0:
        return np.zeros((len(A), len(B)))
    iw = np.minimum(A[:, None, 2], B[None, :, 2]) - np.maximum(A[:, None, 0], B[None, :, 0])
    ih = np.minimum(A[:, None, 3], B[None, :, 3]) - np.maximum(A[:, None, 1], B[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (A[:, 2] - A[:, 0]) * (A[:, 3] - A[:, 1])
    area_b = (B[:, 2] - B[:, 0]) * (B[:, 3] - B[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = inter / union
    same = np.all(A[:, None, :] == B[None, :, :], axis=2)
    out[same] = 1.0
    return out


def pairwise_overlap_counts(boxes: Sequence[BBox], thresholds: Sequence[float]) -> list[int]:
    """Number of unordered pairs ``i < j`` with ``iou > t`` for each threshold ``t``."""
    ts = list(thresholds)
    for t in ts:
        if not 0.0 < t < 1.0:
            raise ValueError(f"threshold {t} outside (0, 1)")
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("thresholds must be strictly increasing")
    if len(boxes) < 2:
        return [0] * len(ts)
    m = iou_matrix(boxes, boxes)
    upper = m[np.triu_indices(len(boxes), k=1)]
    return [int(np.count_nonzero(upper > t)) for t in ts]
