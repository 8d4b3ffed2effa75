"""Crowded-human ground truth: odgt ingestion, visibility, overlap statistics."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

from .geometry import BBox, area, pairwise_overlap_counts

logger = logging.getLogger(__name__)


class AnnotationError(ValueError):
    """Raised for malformed annotation input; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Instance:
    full: BBox
    visible: BBox | None = None
    ignore: bool = False


@dataclass(frozen=True)
class AnnotationSet:
    image_id: str
    instances: tuple[Instance, ...] = ()
    image_size: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        object.__setattr__(self, "instances", tuple(self.instances))

    @property
    def valid_indices(self) -> list[int]:
        return [i for i, inst in enumerate(self.instances) if not inst.ignore]

    @property
    def valid_instances(self) -> list[Instance]:
        return [inst for inst in self.instances if not inst.ignore]


@dataclass
class ParseStats:
    dropped_boxes: int = 0
    lines: int = 0
    per_line_dropped: dict[int, int] = field(default_factory=dict)


def visibility(inst: Instance) -> float:
    """Visible-box area over full-box area, clamped to [0, 1]; 1 without a visible box."""
    if inst.visible is None:
        return 1.0
    return min(1.0, max(0.0, area(inst.visible) / area(inst.full)))


def _box_from_field(raw, name: str, line: int) -> BBox | None:
    try:
        x, y, w, h = (float(v) for v in raw)
    except (TypeError, ValueError):
        raise AnnotationError(f"field '{name}' must be [x, y, w, h]", line) from None
    if w <= 0 or h <= 0:
        return None
    return BBox.from_xywh(x, y, w, h)


def _parse_record(rec: dict, line: int, stats: ParseStats) -> AnnotationSet:
    if not isinstance(rec, dict):
        raise AnnotationError("record is not a JSON object", line)
    for key in ("ID", "gtboxes"):
        if key not in rec:
            raise AnnotationError(f"missing required field '{key}'", line)
    size = None
    if "width" in rec and "height" in rec:
        size = (int(rec["width"]), int(rec["height"]))
    instances = []
    for gt in rec["gtboxes"]:
        if "fbox" not in gt:
            raise AnnotationError("missing required field 'fbox'", line)
        full = _box_from_field(gt["fbox"], "fbox", line)
        if full is None:
            stats.dropped_boxes += 1
            stats.per_line_dropped[line] = stats.per_line_dropped.get(line, 0) + 1
            continue
        visible = None
        if gt.get("vbox") is not None:
            # a degenerate vbox is a fully hidden instance, not a dropped one
            visible = _box_from_field(gt["vbox"], "vbox", line)
        extra = gt.get("extra") or {}
        ignore = bool(extra.get("ignore", 0)) or gt.get("tag", "person") != "person"
        instances.append(Instance(full=full, visible=visible, ignore=ignore))
    return AnnotationSet(image_id=str(rec["ID"]), instances=tuple(instances), image_size=size)


def parse_annotations(lines: Iterable[str], stats: ParseStats | None = None) -> list[AnnotationSet]:
    """Parse odgt JSON-lines into one :class:`AnnotationSet` per non-blank line.

    Boxes with non-positive width or height are dropped and counted in
    ``stats.dropped_boxes``. Duplicate image IDs are rejected.
    """
    stats = stats if stats is not None else ParseStats()
    out: list[AnnotationSet] = []
    seen: set[str] = set()
    for lineno, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"malformed JSON ({exc.msg})", lineno) from None
        aset = _parse_record(rec, lineno, stats)
        if aset.image_id in seen:
            raise AnnotationError(f"duplicate image ID '{aset.image_id}'", lineno)
        seen.add(aset.image_id)
        stats.lines += 1
        out.append(aset)
    if stats.dropped_boxes:
        logger.warning("dropped %d degenerate boxes", stats.dropped_boxes)
    return out


def load_annotations(path, stats: ParseStats | None = None) -> list[AnnotationSet]:
    with open(path, encoding="utf-8") as fh:
        return parse_annotations(fh, stats)


def annotation_to_record(aset: AnnotationSet) -> dict:
    boxes = []
    for inst in aset.instances:
        gt = {"tag": "person", "fbox": list(inst.full.to_xywh())}
        if inst.visible is not None:
            gt["vbox"] = list(inst.visible.to_xywh())
        if inst.ignore:
            gt["extra"] = {"ignore": 1}
        boxes.append(gt)
    rec: dict = {"ID": aset.image_id, "gtboxes": boxes}
    if aset.image_size is not None:
        rec["width"], rec["height"] = aset.image_size
    return rec


def dump_annotations(sets: Sequence[AnnotationSet], fh: TextIO) -> None:
    for aset in sets:
        fh.write(json.dumps(annotation_to_record(aset)) + "\n")


def overlap_report(sets: Sequence[AnnotationSet], thresholds: Sequence[float]) -> list[float]:
    """Mean number of instance pairs per image with IoU above each threshold.

    Ignore-flagged instances are left out of the pair counts.
    """
    if not sets:
        raise ValueError("overlap_report needs at least one image")
    totals = [0] * len(thresholds)
    for aset in sets:
        counts = pairwise_overlap_counts([i.full for i in aset.valid_instances], thresholds)
        totals = [t + c for t, c in zip(totals, counts)]
    return [t / len(sets) for t in totals]
