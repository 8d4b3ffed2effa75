"""Binary instance masks on strided grids and feature suppression."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import BBox

# two-ellipse silhouette in box-normalized (u, v): (center_u, center_v, semi_u, semi_v)
HUMANOID_HEAD = (0.5, 0.14, 0.17, 0.12)
HUMANOID_BODY = (0.5, 0.62, 0.46, 0.40)


class MaskMode(str, enum.Enum):
    FULLBOX = "fullbox"
    HUMANOID = "humanoid"
    EXACT = "exact"


@dataclass(frozen=True)
class FeatureGrid:
    """Dense ``(channels, height, width)`` array with a pixel stride per cell."""

    values: np.ndarray
    stride: float = 1

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 2:
            vals = vals[None]
        if vals.ndim != 3:
            raise ValueError("values must be (channels, height, width)")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, height: int, width: int, stride: float = 1, channels: int = 1) -> "FeatureGrid":
        return cls(np.zeros((channels, height, width)), stride)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def shape2d(self) -> tuple[int, int]:
        return (self.height, self.width)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureGrid):
            return NotImplemented
        return self.stride == other.stride and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class MaskTemplate:
    mode: MaskMode = MaskMode.HUMANOID
    silhouette: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", MaskMode(self.mode))
        if self.mode is MaskMode.EXACT:
            if self.silhouette is None:
                raise ValueError("exact template needs a silhouette")
            sil = np.asarray(self.silhouette)
            if sil.ndim != 2 or not np.isin(sil, (0, 1)).all():
                raise ValueError("silhouette must be a 2D binary array")
            sil = sil.astype(bool)
            sil.flags.writeable = False
            object.__setattr__(self, "silhouette", sil)

    def contains(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Membership of box-normalized points ``(u, v)`` in the template shape."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        inside = (u >= 0) & (u < 1) & (v >= 0) & (v < 1)
        if self.mode is MaskMode.FULLBOX:
            return inside
        if self.mode is MaskMode.HUMANOID:
            return inside & (_in_ellipse(u, v, HUMANOID_HEAD) | _in_ellipse(u, v, HUMANOID_BODY))
        rows, cols = self.silhouette.shape
        r = np.clip(np.floor(v * rows).astype(np.int64), 0, rows - 1)
        c = np.clip(np.floor(u * cols).astype(np.int64), 0, cols - 1)
        return inside & self.silhouette[r, c]


FULLBOX = MaskTemplate(MaskMode.FULLBOX)
HUMANOID = MaskTemplate(MaskMode.HUMANOID)


def _in_ellipse(u, v, params) -> np.ndarray:
    cu, cv, au, av = params
    return ((u - cu) / au) ** 2 + ((v - cv) / av) ** 2 <= 1.0


def template_for(mode: MaskMode | str) -> MaskTemplate:
    mode = MaskMode(mode)
    if mode is MaskMode.EXACT:
        raise ValueError("exact templates are per-instance; build MaskTemplate(EXACT, silhouette)")
    return FULLBOX if mode is MaskMode.FULLBOX else HUMANOID


def _cell_span(lo: float, hi: float, stride: float) -> tuple[int, int]:
    # candidate cells whose centers (k + 0.5) * stride may fall in [lo, hi)
    return math.floor(lo / stride - 0.5), math.ceil(hi / stride)


def _box_cells(box: BBox, template: MaskTemplate, stride: float):
    """Unclipped cell indices (rows, cols) and the in-template mask over them."""
    c0, c1 = _cell_span(box.x1, box.x2, stride)
    r0, r1 = _cell_span(box.y1, box.y2, stride)
    cols = np.arange(c0, c1 + 1)
    rows = np.arange(r0, r1 + 1)
    u = ((cols + 0.5) * stride - box.x1) / box.width
    v = ((rows + 0.5) * stride - box.y1) / box.height
    inside = template.contains(u[None, :], v[:, None])
    return rows, cols, inside


def rasterize_mask(
    box: BBox, template: MaskTemplate, shape: tuple[int, int], stride: float = 1
) -> np.ndarray:
    """Boolean ``(height, width)`` cell mask of the template placed on ``box``.

    A cell is set when its center ``((col + 0.5) * stride, (row + 0.5) * stride)``
    lies inside the template shape; cells outside the grid are clipped away.
    """
    h, w = shape
    out = np.zeros((h, w), dtype=bool)
    rows, cols, inside = _box_cells(box, template, stride)
    rsel = (rows >= 0) & (rows < h)
    csel = (cols >= 0) & (cols < w)
    if not rsel.any() or not csel.any():
        return out
    sub = inside[np.ix_(rsel, csel)]
    out[rows[rsel][0] : rows[rsel][-1] + 1, cols[csel][0] : cols[csel][-1] + 1] = sub
    return out


def rasterize_on(grid: FeatureGrid, box: BBox, template: MaskTemplate) -> np.ndarray:
    return rasterize_mask(box, template, grid.shape2d, grid.stride)


def suppress(grid: FeatureGrid, cells: np.ndarray) -> FeatureGrid:
    """Copy of ``grid`` with every channel zeroed at the masked cells."""
    cells = np.asarray(cells, dtype=bool)
    if cells.shape != grid.shape2d:
        raise ValueError(f"cell mask shape {cells.shape} != grid shape {grid.shape2d}")
    vals = np.array(grid.values)
    vals[:, cells] = 0.0
    return FeatureGrid(vals, grid.stride)


def mask_coverage(box: BBox, template: MaskTemplate, stride: float = 1) -> float:
    """Fraction of the box's cell footprint covered by the template."""
    _, _, footprint = _box_cells(box, FULLBOX, stride)
    _, _, covered = _box_cells(box, template, stride)
    n = int(footprint.sum())
    if n == 0:
        raise ValueError("box covers no cell centers at this stride")
    return int((covered & footprint).sum()) / n
