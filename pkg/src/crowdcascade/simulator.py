"""Synthetic crowded scenes and a visibility-oracle detector.

A scene is a canvas with depth-ordered human instances (front-most last),
each carrying a binary silhouette template. The oracle detector reads scene
ground truth and the suppression masks recorded in a :class:`SceneContext`,
and fires on every instance whose visible fraction clears a threshold.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .annotations import AnnotationSet, Instance
from .geometry import BBox, iou_matrix
from .masking import FULLBOX, HUMANOID, FeatureGrid, MaskMode, MaskTemplate, rasterize_mask, template_for
from .roi import PyramidSpec, fpn_level, hrra_level
from .suppression import Detection, Source

logger = logging.getLogger(__name__)

DUET_FRONT = BBox(100, 100, 200, 300)
DUET_BACK = BBox(150, 100, 250, 300)
DUET_HIGH_BACK = BBox(130, 100, 230, 300)
DUET_CANVAS = (400, 400)


@dataclass(frozen=True)
class SimulatorConfig:
    preset: str | None = None  # "duet", "duet-high" or None for random crowds
    canvas: tuple[int, int] = (640, 480)
    count_range: tuple[int, int] = (10, 30)
    height_range: tuple[int, int] = (80, 220)
    aspect: float = 0.41
    overlap_density: float = 0.15
    pair_iou_range: tuple[float, float] = (0.55, 0.8)
    min_visibility: float = 0.15
    silhouette: str = "humanoid"
    max_retries: int = 50

    def __post_init__(self) -> None:
        if self.preset not in (None, "duet", "duet-high"):
            raise ValueError(f"unknown preset {self.preset!r}")
        lo, hi = self.count_range
        if not 1 <= lo <= hi:
            raise ValueError("count_range must satisfy 1 <= min <= max")
        if not 0.0 <= self.overlap_density <= 1.0:
            raise ValueError("overlap_density must be in [0, 1]")
        if not 0.0 < self.min_visibility <= 1.0:
            raise ValueError("min_visibility must be in (0, 1]")
        a, b = self.pair_iou_range
        if not 0.0 < a <= b < 1.0:
            raise ValueError("pair_iou_range must lie in (0, 1)")
        MaskMode(self.silhouette)


@dataclass(frozen=True, eq=False)
class Scene:
    image_id: str
    canvas: tuple[int, int]  # (width, height)
    instances: tuple[Instance, ...]
    silhouettes: tuple[MaskTemplate, ...]
    seed: int = 0
    dropped: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(self, "silhouettes", tuple(self.silhouettes))
        if len(self.instances) != len(self.silhouettes):
            raise ValueError("one silhouette per instance required")
        w, h = self.canvas
        for inst in self.instances:
            b = inst.full
            if b.x2 <= 0 or b.y2 <= 0 or b.x1 >= w or b.y1 >= h:
                raise ValueError(f"instance box {b} does not intersect the canvas")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.canvas[1], self.canvas[0])

    def annotations(self) -> AnnotationSet:
        return AnnotationSet(self.image_id, self.instances, image_size=self.canvas)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return scene_to_record(self) == scene_to_record(other)

    __hash__ = None  # type: ignore[assignment]


def grid_shape(scene: Scene, stride: float) -> tuple[int, int]:
    w, h = scene.canvas
    return (math.ceil(h / stride), math.ceil(w / stride))


def silhouette_cells(scene: Scene, index: int, stride: float = 1) -> np.ndarray:
    return rasterize_mask(
        scene.instances[index].full, scene.silhouettes[index], grid_shape(scene, stride), stride
    )


def label_map(scene: Scene, stride: float = 1) -> np.ndarray:
    """Index of the front-most instance covering each cell, -1 for background."""
    lm = np.full(grid_shape(scene, stride), -1, dtype=np.int64)
    for i in range(len(scene.instances)):
        lm[silhouette_cells(scene, i, stride)] = i
    return lm


def visible_fractions(
    scene: Scene, extra_masks: np.ndarray | None = None, stride: float = 1
) -> np.ndarray:
    """Visible fraction of every instance; see :func:`visible_fraction`."""
    n = len(scene.instances)
    shape = grid_shape(scene, stride)
    keep = np.ones(shape, dtype=bool) if extra_masks is None else ~np.asarray(extra_masks, dtype=bool)
    lm = label_map(scene, stride)
    num = np.bincount(lm[keep & (lm >= 0)], minlength=n)
    out = np.zeros(n)
    for i in range(n):
        den = int(np.count_nonzero(silhouette_cells(scene, i, stride) & keep))
        if den:
            out[i] = num[i] / den
    return out


def visible_fraction(
    index: int, scene: Scene, extra_masks: np.ndarray | None = None, stride: float = 1
) -> float:
    """Fraction of an instance's unsuppressed silhouette that no front instance covers.

    Suppressed cells (``extra_masks``) are removed from the instance and from
    its occluders alike, so masking an occluder reveals what was behind it.
    An instance whose silhouette is entirely suppressed has fraction 0.
    """
    if not 0 <= index < len(scene.instances):
        raise IndexError(index)
    return float(visible_fractions(scene, extra_masks, stride)[index])


def render_saliency(scene: Scene, stride: float = 1, image_mask: np.ndarray | None = None) -> FeatureGrid:
    """Single-channel cue map: front-most instance index + 1 per cell, 0 for background.

    ``image_mask`` (stride-1, canvas-sized) erases cells whose center pixel is
    masked, modelling suppression applied to the input image.
    """
    lm = label_map(scene, stride)
    vals = (lm + 1).astype(np.float64)
    if image_mask is not None:
        vals[sample_image_mask(image_mask, vals.shape, stride)] = 0.0
    return FeatureGrid(vals[None], stride)


def sample_image_mask(image_mask: np.ndarray, shape: tuple[int, int], stride: float) -> np.ndarray:
    """Pixel mask sampled at the centers of a strided grid."""
    image_mask = np.asarray(image_mask, dtype=bool)
    if stride == 1 and image_mask.shape == shape:
        return image_mask
    h, w = shape
    ph, pw = image_mask.shape
    r = np.minimum(np.floor((np.arange(h) + 0.5) * stride).astype(np.int64), ph - 1)
    c = np.minimum(np.floor((np.arange(w) + 0.5) * stride).astype(np.int64), pw - 1)
    return image_mask[np.ix_(r, c)]


def upsample_cells(cells: np.ndarray, stride: int, shape: tuple[int, int]) -> np.ndarray:
    up = np.kron(np.asarray(cells, dtype=np.uint8), np.ones((stride, stride), dtype=np.uint8)).astype(bool)
    return up[: shape[0], : shape[1]]


@dataclass(frozen=True, eq=False)
class SceneContext:
    """What a detector sees: the scene, its feature pyramid and the suppression state."""

    scene: Scene
    pyramid: PyramidSpec
    grids: dict[int, FeatureGrid]
    image_mask: np.ndarray
    cell_masks: dict[int, np.ndarray]

    @classmethod
    def build(cls, scene: Scene, pyramid: PyramidSpec | None = None) -> "SceneContext":
        pyramid = pyramid or PyramidSpec()
        grids = {k: render_saliency(scene, pyramid.stride(k)) for k in pyramid.levels}
        cells = {k: np.zeros(g.shape2d, dtype=bool) for k, g in grids.items()}
        return cls(scene, pyramid, grids, np.zeros(scene.shape, dtype=bool), cells)

    def mask_at_stride(self, level: int | None) -> tuple[np.ndarray, int]:
        """Suppressed cells as read at pyramid ``level`` (``None`` = stride 1)."""
        if level is None:
            fine = self.pyramid.k_min
            m = self.image_mask | upsample_cells(self.cell_masks[fine], self.pyramid.stride(fine), self.scene.shape)
            return m, 1
        s = self.pyramid.stride(level)
        m = self.cell_masks[level] | sample_image_mask(self.image_mask, self.cell_masks[level].shape, s)
        return m, s


@dataclass(frozen=True)
class OracleConfig:
    visibility_threshold: float = 0.3
    jitter_sigma: float = 0.0
    score_map: str = "identity"
    min_support: float = 0.1  # unsuppressed share of the silhouette required to fire

    def __post_init__(self) -> None:
        if not 0.0 < self.visibility_threshold < 1.0:
            raise ValueError("visibility_threshold must be in (0, 1)")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if self.score_map not in SCORE_MAPS:
            raise ValueError(f"unknown score_map {self.score_map!r}; choose from {sorted(SCORE_MAPS)}")
        if not 0.0 <= self.min_support <= 1.0:
            raise ValueError("min_support must be in [0, 1]")


SCORE_MAPS: dict[str, Callable[[float], float]] = {
    "identity": lambda f: min(1.0, max(0.0, f)),
    "one": lambda f: 1.0,
    "sqrt": lambda f: math.sqrt(min(1.0, max(0.0, f))),
}

ROI_LEVELS = ("pixel", "hrra", "fpn")


def _jittered(box: BBox, rng: np.random.Generator, sigma: float) -> BBox:
    if sigma == 0:
        return box
    d = rng.normal(0.0, sigma, size=4)
    x1, y1, x2, y2 = box.x1 + d[0], box.y1 + d[1], box.x2 + d[2], box.y2 + d[3]
    # keep the jittered box valid: at least one pixel wide and tall
    x1, x2 = min(x1, x2 - 1.0), max(x2, x1 + 1.0)
    y1, y2 = min(y1, y2 - 1.0), max(y2, y1 + 1.0)
    return BBox(float(x1), float(y1), float(x2), float(y2))


def _support(scene: Scene, mask: np.ndarray, stride: int) -> np.ndarray:
    out = np.zeros(len(scene.instances))
    for i in range(len(scene.instances)):
        sil = silhouette_cells(scene, i, stride)
        n = np.count_nonzero(sil)
        if n:
            out[i] = np.count_nonzero(sil & ~mask) / n
    return out


def oracle_detect(
    context: SceneContext,
    cfg: OracleConfig,
    roi_level: str = "pixel",
    source: Source = Source.PRIMARY,
    stream: int = 0,
) -> list[Detection]:
    """Detect every instance whose visible fraction is at least the threshold.

    Visibility is read at the resolution the detector extracts features from:
    stride 1 for ``"pixel"``, the finest pyramid level for ``"hrra"``, and the
    scale-assigned level of each instance for ``"fpn"``. Boxes are the ground
    truth full boxes plus seeded Gaussian jitter; scores are
    ``score_map(fraction)`` in instance order.
    """
    if roi_level not in ROI_LEVELS:
        raise ValueError(f"unknown roi_level {roi_level!r}")
    scene = context.scene
    n = len(scene.instances)
    if n == 0:
        return []
    levels: list[int | None]
    if roi_level == "pixel":
        levels = [None] * n
    elif roi_level == "hrra":
        levels = [hrra_level(inst.full, context.pyramid) for inst in scene.instances]
    else:
        levels = [fpn_level(inst.full, context.pyramid) for inst in scene.instances]

    frac = np.zeros(n)
    support = np.zeros(n)
    for level in sorted(set(levels), key=lambda k: -1 if k is None else k):
        mask, stride = context.mask_at_stride(level)
        idx = [i for i, k in enumerate(levels) if k == level]
        f = visible_fractions(scene, mask, stride)
        frac[idx] = f[idx]
        if cfg.min_support > 0:
            support[idx] = _support(scene, mask, stride)[idx]

    score_map = SCORE_MAPS[cfg.score_map]
    rng = np.random.default_rng([scene.seed, stream])
    dets = []
    for i, inst in enumerate(scene.instances):
        box = _jittered(inst.full, rng, cfg.jitter_sigma)
        if frac[i] < cfg.visibility_threshold:
            continue
        if cfg.min_support > 0 and support[i] < cfg.min_support:
            continue
        dets.append(Detection(box, score_map(float(frac[i])), source))
    return dets


@dataclass
class OracleDetector:
    """Detector-interface wrapper around :func:`oracle_detect`."""

    cfg: OracleConfig = field(default_factory=OracleConfig)
    roi_level: str = "pixel"
    source: Source = Source.PRIMARY
    stream: int = 0

    def detect(self, context: SceneContext) -> list[Detection]:
        return oracle_detect(context, self.cfg, self.roi_level, self.source, self.stream)


def perfect_detector(context: SceneContext) -> list[Detection]:
    """Fires on every non-ignored instance with its exact box and score 1."""
    return [
        Detection(inst.full, 1.0, Source.PRIMARY)
        for inst in context.scene.instances
        if not inst.ignore
    ]


# -- scene generation -------------------------------------------------------


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _derived_instances(boxes: Sequence[BBox], templates: Sequence[MaskTemplate], canvas) -> tuple[Instance, ...]:
    tmp = Scene("tmp", canvas, tuple(Instance(b) for b in boxes), tuple(templates))
    lm = label_map(tmp)
    out = []
    for i, b in enumerate(boxes):
        r0, c0 = max(0, math.floor(b.y1)), max(0, math.floor(b.x1))
        rows, cols = np.nonzero(lm[r0 : math.ceil(b.y2), c0 : math.ceil(b.x2)] == i)
        if len(rows):
            rows, cols = rows + r0, cols + c0
            vis = BBox(float(cols.min()), float(rows.min()), float(cols.max() + 1), float(rows.max() + 1))
        else:
            # fully hidden: a one-pixel visible box keeps visibility near 0
            vis = BBox(b.x1, b.y1, b.x1 + 1, b.y1 + 1)
        out.append(Instance(full=b, visible=vis))
    return tuple(out)


def make_scene(
    image_id: str,
    boxes: Sequence[BBox],
    canvas: tuple[int, int],
    silhouette: MaskTemplate | str = "humanoid",
    seed: int = 0,
    dropped: int = 0,
) -> Scene:
    """Build a scene from back-to-front boxes, deriving visible boxes from the silhouettes."""
    tpl = silhouette if isinstance(silhouette, MaskTemplate) else template_for(silhouette)
    templates = tuple(tpl for _ in boxes)
    return Scene(image_id, canvas, _derived_instances(boxes, templates, canvas), templates, seed, dropped)


def duet_scene(high_overlap: bool = False, image_id: str = "duet", seed: int = 0) -> Scene:
    """Two FullBox instances; the back one is half hidden, or 70% hidden when ``high_overlap``."""
    back = DUET_HIGH_BACK if high_overlap else DUET_BACK
    return make_scene(image_id, [back, DUET_FRONT], DUET_CANVAS, FULLBOX, seed)


def _place_one(
    rng: np.random.Generator,
    cfg: SimulatorConfig,
    boxes: list[BBox],
    lm: np.ndarray,
    sil_counts: list[int],
    visible: list[int],
    tpl: MaskTemplate,
) -> tuple[BBox, np.ndarray, np.ndarray] | None:
    W, H = cfg.canvas
    for _ in range(cfg.max_retries):
        if boxes and rng.random() < cfg.overlap_density:
            ref = boxes[int(rng.integers(len(boxes)))]
            w, h = ref.width, ref.height
            t = rng.uniform(*cfg.pair_iou_range)
            # equal boxes shifted by d horizontally have IoU (w - d) / (w + d)
            d = round(w * (1 - t) / (1 + t))
            sign = 1 if rng.random() < 0.5 else -1
            x, y = ref.x1 + sign * d, ref.y1
        else:
            h = int(rng.integers(cfg.height_range[0], cfg.height_range[1] + 1))
            w = max(4, round(h * cfg.aspect))
            if w >= W or h >= H:
                continue
            x = int(rng.integers(0, W - w + 1))
            y = int(rng.integers(0, H - h + 1))
        if x < 0 or y < 0 or x + w > W or y + h > H:
            continue
        box = BBox(float(x), float(y), float(x + w), float(y + h))
        if cfg.overlap_density == 0.0 and boxes:
            if np.any(iou_matrix([box], boxes) > 0):
                continue
        cells = rasterize_mask(box, tpl, lm.shape, 1)
        if not cells.any():
            continue
        win = (slice(int(y), int(y + h)), slice(int(x), int(x + w)))
        under = lm[win][cells[win]]
        covered = np.bincount(under[under >= 0], minlength=len(boxes))
        after = np.asarray(visible, dtype=np.int64) - covered
        if boxes and np.any(after < cfg.min_visibility * np.asarray(sil_counts)):
            continue
        return box, cells, covered
    return None


def generate_scene(cfg: SimulatorConfig, seed: int, index: int) -> Scene:
    s = scene_seed(seed, index)
    image_id = f"sim-{seed}-{index:05d}"
    if cfg.preset is not None:
        return duet_scene(cfg.preset == "duet-high", image_id=image_id, seed=s)
    rng = np.random.default_rng(s)
    tpl = template_for(cfg.silhouette)
    n = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
    W, H = cfg.canvas
    lm = np.full((H, W), -1, dtype=np.int64)
    boxes: list[BBox] = []
    sil_counts: list[int] = []
    visible: list[int] = []
    dropped = 0
    for _ in range(n):
        placed = _place_one(rng, cfg, boxes, lm, sil_counts, visible, tpl)
        if placed is None:
            dropped += 1
            continue
        box, cells, covered = placed
        visible = [v - int(c) for v, c in zip(visible, covered)]
        lm[cells] = len(boxes)
        boxes.append(box)
        sil_counts.append(int(cells.sum()))
        visible.append(sil_counts[-1])
    if dropped:
        logger.warning("%s: placed %d of %d instances", image_id, len(boxes), n)
    return make_scene(image_id, boxes, cfg.canvas, tpl, s, dropped)


def generate_scenes(cfg: SimulatorConfig, count: int, seed: int) -> list[Scene]:
    """Deterministic scene list; scene ``i`` draws from its own ``(seed, i)`` stream."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return [generate_scene(cfg, seed, i) for i in range(count)]


# -- serialization ----------------------------------------------------------


def scene_to_record(scene: Scene) -> dict:
    gtboxes = []
    for inst, tpl in zip(scene.instances, scene.silhouettes):
        if tpl.mode is MaskMode.EXACT:
            raise ValueError("exact silhouettes are not serializable")
        gt = {"tag": "person", "fbox": list(inst.full.to_xywh()), "silhouette": tpl.mode.value}
        if inst.visible is not None:
            gt["vbox"] = list(inst.visible.to_xywh())
        gtboxes.append(gt)
    return {
        "ID": scene.image_id,
        "width": scene.canvas[0],
        "height": scene.canvas[1],
        "seed": scene.seed,
        "dropped": scene.dropped,
        "gtboxes": gtboxes,
    }


def scene_from_record(rec: dict) -> Scene:
    instances, templates = [], []
    for gt in rec["gtboxes"]:
        full = BBox.from_xywh(*gt["fbox"])
        vis = BBox.from_xywh(*gt["vbox"]) if gt.get("vbox") else None
        ignore = bool((gt.get("extra") or {}).get("ignore", 0)) or gt.get("tag", "person") != "person"
        instances.append(Instance(full, vis, ignore))
        templates.append(template_for(gt.get("silhouette", "humanoid")))
    canvas = (int(rec["width"]), int(rec["height"]))
    return Scene(str(rec["ID"]), canvas, tuple(instances), tuple(templates), int(rec.get("seed", 0)), int(rec.get("dropped", 0)))


def write_scenes(scenes: Iterable[Scene], fh: TextIO) -> None:
    for scene in scenes:
        fh.write(json.dumps(scene_to_record(scene), sort_keys=True) + "\n")


def read_scenes(fh: Iterable[str]) -> list[Scene]:
    out = []
    for lineno, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            out.append(scene_from_record(json.loads(line)))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"line {lineno}: bad scene record ({exc})") from None
    return out
