"""Detect-suppress-detect cascade for crowded human detection, with a scene simulator and evaluation suite."""

from .geometry import BBox, area, iou, pairwise_overlap_counts
from .suppression import Detection, Source, greedy_nms, soft_nms

__all__ = ["BBox", "Detection", "Source", "area", "greedy_nms", "iou", "pairwise_overlap_counts", "soft_nms"]
