"""Detection evaluation: matching, COCO-style AP@0.5, recall, mMR, breakdowns."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .annotations import AnnotationSet, visibility
from .geometry import boxes_to_array, iou_matrix
from .suppression import Detection, Source

TP, FP, IGNORED = 1, 0, -1
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
_RECALL_STEPS = np.arange(101)  # recall point k is k / 100
FPPI_POINTS = 10.0 ** np.linspace(-2.0, 0.0, 9)
MR_FLOOR = 1e-10


@dataclass
class ImageMatch:
    status: np.ndarray  # per detection: TP, FP or IGNORED
    det_gt: np.ndarray  # per detection: matched GT index or -1
    gt_matched: np.ndarray  # per GT: bool (always False for ignored GT)


def score_order(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))


def match_image(dets: Sequence[Detection], gt: AnnotationSet, iou_threshold: float = 0.5) -> ImageMatch:
    n, g = len(dets), len(gt.instances)
    status = np.full(n, FP, dtype=np.int64)
    det_gt = np.full(n, -1, dtype=np.int64)
    gt_matched = np.zeros(g, dtype=bool)
    if n == 0 or g == 0:
        return ImageMatch(status, det_gt, gt_matched)
    ignore = np.array([inst.ignore for inst in gt.instances])
    ious = iou_matrix(boxes_to_array(d.box for d in dets), boxes_to_array(i.full for i in gt.instances))
    for d in score_order(dets):
        cand = np.where(~ignore & ~gt_matched, ious[d], -1.0)
        j = int(np.argmax(cand))
        if cand[j] >= iou_threshold:
            status[d], det_gt[d] = TP, j
            gt_matched[j] = True
        elif ignore.any() and ious[d][ignore].max() >= iou_threshold:
            status[d] = IGNORED
    return ImageMatch(status, det_gt, gt_matched)


def match_detections(
    dets: Mapping[str, Sequence[Detection]], gts: Sequence[AnnotationSet], iou_threshold: float = 0.5
) -> dict[str, ImageMatch]:
    """Per-image greedy matching in descending score order.

    Each detection claims the unmatched non-ignored ground truth with the
    highest IoU at or above the threshold. Detections that only reach
    ignore-flagged ground truth are marked ``IGNORED`` and drop out of the
    PR curve.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold {iou_threshold} outside (0, 1)")
    return {gt.image_id: match_image(dets.get(gt.image_id, ()), gt, iou_threshold) for gt in gts}


def _gt_total(gts: Sequence[AnnotationSet]) -> int:
    total = sum(len(g.valid_indices) for g in gts)
    if total == 0:
        raise ValueError("no non-ignored ground truth")
    return total


def _scored_flags(dets, gts, matches) -> tuple[np.ndarray, np.ndarray]:
    scores, flags = [], []
    for gt in gts:
        m = matches[gt.image_id]
        for d, st in zip(dets.get(gt.image_id, ()), m.status):
            if st != IGNORED:
                scores.append(d.score)
                flags.append(st == TP)
    return np.array(scores, dtype=np.float64), np.array(flags, dtype=bool)


@dataclass
class Curve:
    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    n_gt: int = 0


def pr_curve(scores: np.ndarray, is_tp: np.ndarray, n_gt: int) -> Curve:
    """Cumulative counts at every distinct score threshold, highest first."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = is_tp[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    # operating points exist only at the end of each tie group
    last = np.ones(len(s), dtype=bool)
    if len(s):
        last[:-1] = s[:-1] != s[1:]
    tp, fp, s = tp[last], fp[last], s[last]
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
    return Curve(s, tp, fp, prec, tp / n_gt, n_gt)


def _interpolated_ap(curve: Curve) -> float:
    if len(curve.recall) == 0:
        return 0.0
    envelope = np.maximum.accumulate(curve.precision[::-1])[::-1]
    # tp / n_gt >= k / 100 checked in integers; float recall can sit an ulp
    # below a linspace point it equals exactly (7/20 vs 0.35000000000000003)
    idx = np.searchsorted(100 * curve.tp, _RECALL_STEPS * curve.n_gt, side="left")
    q = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(q.mean())


def average_precision(
    dets: Mapping[str, Sequence[Detection]], gts: Sequence[AnnotationSet], iou: float = 0.5
) -> float:
    """COCO-style AP: mean interpolated precision at 101 recall points."""
    n_gt = _gt_total(gts)
    scores, flags = _scored_flags(dets, gts, match_detections(dets, gts, iou))
    return _interpolated_ap(pr_curve(scores, flags, n_gt))


def recall_at_all(
    dets: Mapping[str, Sequence[Detection]], gts: Sequence[AnnotationSet], iou: float = 0.5
) -> float:
    n_gt = _gt_total(gts)
    matches = match_detections(dets, gts, iou)
    return sum(int(m.gt_matched.sum()) for m in matches.values()) / n_gt


@dataclass
class MissRatePoint:
    fppi_target: float
    miss_rate: float
    threshold: float  # score threshold of the operating point; inf when nothing is kept


@dataclass
class MmrResult:
    mmr: float
    points: list[MissRatePoint]
    fppi: np.ndarray
    miss_rate: np.ndarray
    thresholds: np.ndarray


def mmr_details(
    dets: Mapping[str, Sequence[Detection]],
    gts: Sequence[AnnotationSet],
    image_count: int | None = None,
    iou: float = 0.5,
) -> MmrResult:
    image_count = len(gts) if image_count is None else image_count
    if image_count < 1:
        raise ValueError("image_count must be >= 1")
    n_gt = _gt_total(gts)
    scores, flags = _scored_flags(dets, gts, match_detections(dets, gts, iou))
    c = pr_curve(scores, flags, n_gt)
    fppi = np.concatenate([[0.0], c.fp / image_count])
    mr = np.concatenate([[1.0], 1.0 - c.tp / n_gt])
    thr = np.concatenate([[math.inf], c.thresholds])
    points = []
    for f in FPPI_POINTS:
        # lowest threshold whose FPPI stays within the target
        k = int(np.searchsorted(fppi, f, side="right")) - 1
        points.append(MissRatePoint(float(f), float(mr[k]), float(thr[k])))
    rates = np.array([max(p.miss_rate, MR_FLOOR) for p in points])
    return MmrResult(float(np.exp(np.log(rates).mean())), points, fppi, mr, thr)


def mmr(
    dets: Mapping[str, Sequence[Detection]],
    gts: Sequence[AnnotationSet],
    image_count: int | None = None,
    iou: float = 0.5,
) -> float:
    """Log-average miss rate over nine FPPI points from 1e-2 to 1."""
    return mmr_details(dets, gts, image_count, iou).mmr


def bucket_label(lo: float, hi: float, first: bool) -> str:
    return f"{'[' if first else '('}{lo:.2f},{hi:.2f}]"


def visibility_bucket_stats(
    dets: Mapping[str, Sequence[Detection]],
    gts: Sequence[AnnotationSet],
    edges: Sequence[float] = (0.5,),
    iou: float = 0.5,
) -> dict[str, tuple[int, int]]:
    """``(matched, total)`` per visibility bucket; empty buckets are omitted."""
    inner = list(edges)
    if any(not 0.0 < e < 1.0 for e in inner) or any(b <= a for a, b in zip(inner, inner[1:])):
        raise ValueError("bucket edges must be strictly increasing inside (0, 1)")
    bounds = [0.0] + inner + [1.0]
    matches = match_detections(dets, gts, iou)
    matched = [0] * (len(bounds) - 1)
    total = [0] * (len(bounds) - 1)
    for gt in gts:
        m = matches[gt.image_id]
        for j in gt.valid_indices:
            v = visibility(gt.instances[j])
            b = max(0, int(np.searchsorted(inner, v, side="left")))
            total[b] += 1
            matched[b] += int(m.gt_matched[j])
    return {
        bucket_label(bounds[b], bounds[b + 1], b == 0): (matched[b], total[b])
        for b in range(len(total))
        if total[b]
    }


def visibility_bucket_recall(
    dets: Mapping[str, Sequence[Detection]],
    gts: Sequence[AnnotationSet],
    edges: Sequence[float] = (0.5,),
    iou: float = 0.5,
) -> dict[str, float]:
    return {k: m / t for k, (m, t) in visibility_bucket_stats(dets, gts, edges, iou).items()}


@dataclass
class ScoreHistogram:
    edges: list[float]
    counts: dict[str, list[int]]


def score_histogram(dets: Sequence[Detection], bins: int = 10, min_score: float = 0.5) -> ScoreHistogram:
    """Counts of detections scoring above ``min_score``, per source, over uniform bins up to 1.

    Bin edges follow :func:`numpy.histogram`: each bin is closed on the left
    except that the last also includes 1.0.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if not 0.0 <= min_score < 1.0:
        raise ValueError("min_score must be in [0, 1)")
    edges = np.linspace(min_score, 1.0, bins + 1)
    counts = {}
    for src in Source:
        # min_score 0 keeps zero-score detections too
        s = np.array([d.score for d in dets if d.source is src and (d.score > min_score or min_score == 0.0)])
        counts[src.value] = np.histogram(s, bins=edges)[0].astype(int).tolist()
    return ScoreHistogram(edges.tolist(), counts)


@dataclass
class EvalReport:
    ap: float
    recall: float
    mmr: float
    bucket_recall: dict[str, float]
    score_hist: ScoreHistogram
    tp: int
    fp: int
    fn: int
    ignored: int
    mmr_points: list[MissRatePoint] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mmr_points"] = [
            {**asdict(p), "threshold": None if math.isinf(p.threshold) else p.threshold}
            for p in self.mmr_points
        ]
        return d


@dataclass
class Evaluation:
    report: EvalReport
    curve: Curve
    mmr: MmrResult
    bucket_stats: dict[str, tuple[int, int]]


def evaluate(
    dets: Mapping[str, Sequence[Detection]],
    gts: Sequence[AnnotationSet],
    iou: float = 0.5,
    bucket_edges: Sequence[float] = (0.5,),
    hist_bins: int = 10,
    hist_min: float = 0.5,
) -> Evaluation:
    n_gt = _gt_total(gts)
    matches = match_detections(dets, gts, iou)
    scores, flags = _scored_flags(dets, gts, matches)
    curve = pr_curve(scores, flags, n_gt)
    mres = mmr_details(dets, gts, len(gts), iou)
    stats = visibility_bucket_stats(dets, gts, bucket_edges, iou)
    tp = int(flags.sum())
    all_dets = [d for gt in gts for d in dets.get(gt.image_id, ())]
    report = EvalReport(
        ap=_interpolated_ap(curve),
        recall=tp / n_gt,
        mmr=mres.mmr,
        bucket_recall={k: m / t for k, (m, t) in stats.items()},
        score_hist=score_histogram(all_dets, hist_bins, hist_min),
        tp=tp,
        fp=int((~flags).sum()),
        fn=n_gt - tp,
        ignored=sum(int((m.status == IGNORED).sum()) for m in matches.values()),
        mmr_points=mres.points,
    )
    return Evaluation(report, curve, mres, stats)


def write_plot_data(ev: Evaluation, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "pr_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall"])
        for row in zip(ev.curve.thresholds, ev.curve.precision, ev.curve.recall):
            w.writerow([repr(float(v)) for v in row])
    with open(out / "fppi_missrate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fppi", "miss_rate"])
        for row in zip(ev.mmr.thresholds, ev.mmr.fppi, ev.mmr.miss_rate):
            w.writerow([repr(float(v)) for v in row])
    with open(out / "visibility_recall.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket", "matched", "total", "recall"])
        for k, (m, t) in ev.bucket_stats.items():
            w.writerow([k, m, t, repr(m / t)])
    with open(out / "score_hist.csv", "w", newline="") as fh:
        hist = ev.report.score_hist
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", *hist.counts])
        for b in range(len(hist.edges) - 1):
            w.writerow([hist.edges[b], hist.edges[b + 1], *(c[b] for c in hist.counts.values())])
