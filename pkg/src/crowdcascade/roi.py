"""Pyramid level assignment and RoI Align."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BBox, area
from .masking import FeatureGrid


@dataclass(frozen=True)
class PyramidSpec:
    k_min: int = 2
    k_max: int = 5
    k0: int = 4
    canonical_size: float = 224.0

    def __post_init__(self) -> None:
        if not self.k_min <= self.k0 <= self.k_max:
            raise ValueError("need k_min <= k0 <= k_max")
        if self.canonical_size <= 0:
            raise ValueError("canonical_size must be positive")

    @property
    def levels(self) -> list[int]:
        return list(range(self.k_min, self.k_max + 1))

    def stride(self, k: int) -> int:
        return 2**k


def fpn_level(box: BBox, spec: PyramidSpec) -> int:
    k = math.floor(spec.k0 + math.log2(math.sqrt(area(box)) / spec.canonical_size))
    return min(spec.k_max, max(spec.k_min, k))


def hrra_level(box: BBox, spec: PyramidSpec) -> int:
    """Highest-resolution level, independent of the box."""
    return spec.k_min


def bilinear(channel_values: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample ``(C, H, W)`` values at grid coordinates ``(x, y)``.

    Grid coordinates are pixel coordinates divided by the stride, so cell
    ``(r, c)`` has its center at ``(c + 0.5, r + 0.5)``. Points outside
    ``[0, W] x [0, H]`` sample 0; points in the outer half-cell border use the
    nearest edge cells.
    """
    _, h, w = channel_values.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    outside = (x < 0) | (x > w) | (y < 0) | (y > h)
    gx = np.clip(x - 0.5, 0.0, w - 1)
    gy = np.clip(y - 0.5, 0.0, h - 1)
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    lx = gx - x0
    ly = gy - y0
    v = (
        channel_values[:, y0, x0] * ((1 - ly) * (1 - lx))
        + channel_values[:, y0, x1] * ((1 - ly) * lx)
        + channel_values[:, y1, x0] * (ly * (1 - lx))
        + channel_values[:, y1, x1] * (ly * lx)
    )
    return np.where(outside, 0.0, v)


def roi_align(
    grid: FeatureGrid, box: BBox, out_h: int, out_w: int, samples_per_bin: int = 2
) -> np.ndarray:
    """Pool ``grid`` over ``box`` into a ``(channels, out_h, out_w)`` array.

    Each bin averages ``samples_per_bin ** 2`` bilinear samples on a regular
    sub-grid. The box is divided by the stride without rounding.
    """
    if out_h < 1 or out_w < 1 or samples_per_bin < 1:
        raise ValueError("out_h, out_w and samples_per_bin must be >= 1")
    s = grid.stride
    x1, y1 = box.x1 / s, box.y1 / s
    bin_w = (box.x2 - box.x1) / s / out_w
    bin_h = (box.y2 - box.y1) / s / out_h
    n = samples_per_bin
    offs = (np.arange(n) + 0.5) / n
    xs = x1 + (np.arange(out_w)[:, None] + offs[None, :]) * bin_w  # (out_w, n)
    ys = y1 + (np.arange(out_h)[:, None] + offs[None, :]) * bin_h  # (out_h, n)
    X = np.broadcast_to(xs[None, :, None, :], (out_h, out_w, n, n))
    Y = np.broadcast_to(ys[:, None, :, None], (out_h, out_w, n, n))
    samples = bilinear(grid.values, X, Y)  # (C, out_h, out_w, n, n)
    return samples.mean(axis=(-2, -1))
