import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from conftest import random_boxes
from crowdcascade.annotations import AnnotationSet, Instance
from crowdcascade.cascade import (
    CascadeConfig,
    label_proposals,
    partition_targets,
    read_detections,
    run_cascade,
    run_cascade_detailed,
    single_pass,
    write_detections,
)
from crowdcascade.config import RunConfig
from crowdcascade.geometry import BBox, iou
from crowdcascade.pipeline import detectors
from crowdcascade.simulator import (
    DUET_FRONT,
    DUET_HIGH_BACK,
    SceneContext,
    SimulatorConfig,
    duet_scene,
    generate_scenes,
    make_scene,
    perfect_detector,
)
from crowdcascade.suppression import Detection, Source

G1, G2 = BBox(0, 0, 10, 10), BBox(50, 50, 60, 60)


class _Fixed:
    def __init__(self, dets):
        self.dets = list(dets)

    def detect(self, context):
        return list(self.dets)


class _Perfect:
    def detect(self, context):
        return perfect_detector(context)


def _gt(*boxes, ignore=()):
    return AnnotationSet("img", tuple(Instance(b, None, i in ignore) for i, b in enumerate(boxes)))


def test_partition_examples():
    gt = _gt(G1, G2)
    det = Detection(BBox(0, 0, 10, 9), 0.8)
    assert iou(det.box, G1) == pytest.approx(0.9)
    p = partition_targets(gt, [det], 0.5, 0.5)
    assert (p.detected, p.missed) == ((0,), (1,))
    assert partition_targets(gt, [], 0.5, 0.5).missed == (0, 1)
    both = [Detection(G1, 0.9), Detection(G2, 0.9)]
    assert partition_targets(gt, both).missed == ()


def test_partition_ignores_low_scores_and_ignored_gt():
    gt = _gt(G1, G2, ignore=(1,))
    p = partition_targets(gt, [Detection(G1, 0.4), Detection(G2, 0.9)])
    assert (p.detected, p.missed) == ((), (0,))


def test_partition_is_one_to_one():
    gt = _gt(G1, BBox(1, 0, 11, 10))
    dets = [Detection(G1, 0.9), Detection(G1, 0.8)]
    p = partition_targets(gt, dets)
    assert p.detected == (0, 1) and p.claims == {0: 0, 1: 1}


def test_partition_threshold_validation():
    with pytest.raises(ValueError):
        partition_targets(_gt(G1), [], match_iou=1.0)


def test_partition_is_exact_on_random_inputs(rng):
    for _ in range(200):
        n = int(rng.integers(0, 10))
        boxes = random_boxes(rng, n, 80)
        ignore = {i for i in range(n) if rng.random() < 0.2}
        gt = _gt(*boxes, ignore=ignore)
        dets = [Detection(b, float(rng.random())) for b in random_boxes(rng, int(rng.integers(0, 10)), 80)]
        p = partition_targets(gt, dets)
        assert set(p.detected) | set(p.missed) == set(gt.valid_indices)
        assert not set(p.detected) & set(p.missed)


def test_label_proposals_examples():
    target = Instance(BBox(0, 0, 100, 100))
    prop = BBox(0, 0, 100, 65)
    assert iou(prop, target.full) == pytest.approx(0.65)
    assert label_proposals([prop], [target], 0.6) == [0]
    assert label_proposals([prop], [target], 0.7) == [None]
    assert label_proposals([target.full], [target], 0.99) == [0]
    assert label_proposals([prop], [], 0.5) == [None]
    assert label_proposals([], [target], 0.5) == []


def test_label_proposals_tie_goes_to_lowest_target():
    t = [Instance(BBox(0, 0, 10, 10)), Instance(BBox(0, 0, 10, 10))]
    assert label_proposals([BBox(0, 0, 10, 10)], t, 0.5) == [0]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_label_proposals_positive_count_monotone(seed):
    rng = np.random.default_rng(seed)
    targets = [Instance(b) for b in random_boxes(rng, int(rng.integers(1, 8)), 60)]
    props = random_boxes(rng, 30, 60)
    counts = [sum(x is not None for x in label_proposals(props, targets, t)) for t in (0.5, 0.6, 0.7)]
    assert counts == sorted(counts, reverse=True)


def test_cascade_config_validation():
    with pytest.raises(ValueError):
        CascadeConfig(mask_mode="circle")
    with pytest.raises(ValueError):
        CascadeConfig(p_nms=1.0)
    with pytest.raises(ValueError):
        CascadeConfig(mask_at="somewhere")


def test_empty_scene_gives_empty_output():
    ctx = SceneContext.build(make_scene("e", [], (64, 64)))
    p, s = detectors(RunConfig())
    assert run_cascade(ctx, p, s, CascadeConfig()) == []


def test_silent_secondary_returns_primary_exactly():
    ctx = SceneContext.build(duet_scene())
    p = [Detection(DUET_FRONT, 0.9), Detection(BBox(300, 300, 350, 390), 0.7)]
    out = run_cascade(ctx, _Fixed(p), _Fixed([]), CascadeConfig())
    assert out == single_pass(ctx, _Fixed(p))


def test_high_overlap_duet():
    cfg = RunConfig(cascade=CascadeConfig(mask_mode="exact", mask_at="gt"))
    ctx = SceneContext.build(duet_scene(high_overlap=True))
    p, s = detectors(cfg)
    assert [d.box for d in single_pass(ctx, p, 0.5)] == [DUET_FRONT]
    res = run_cascade_detailed(ctx, p, s, cfg.cascade)
    assert [(d.box, d.score, d.source) for d in res.detections] == [
        (DUET_FRONT, 1.0, Source.PRIMARY),
        (DUET_HIGH_BACK, 1.0, Source.SECONDARY),
    ]
    assert (res.partition.detected, res.partition.missed) == ((1,), (0,))


@pytest.mark.parametrize("mode", ["fullbox", "exact"])
@pytest.mark.parametrize("mask_at", ["gt", "detection"])
@pytest.mark.parametrize("mask_on", ["features", "image"])
def test_duet_recovered_under_every_placement(mode, mask_at, mask_on):
    cfg = RunConfig(cascade=CascadeConfig(mask_mode=mode, mask_at=mask_at, mask_on=mask_on))
    ctx = SceneContext.build(duet_scene(high_overlap=True))
    out = run_cascade(ctx, *detectors(cfg), cfg.cascade)
    assert {d.box for d in out} == {DUET_FRONT, DUET_HIGH_BACK}


def test_humanoid_mask_on_rectangles_leaves_a_redetectable_residue():
    # the duet uses rectangular silhouettes; a humanoid mask leaves the front
    # instance's corners, which the secondary fires on and then NMS keeps over B
    cfg = RunConfig(cascade=CascadeConfig(mask_mode="humanoid"))
    ctx = SceneContext.build(duet_scene(high_overlap=True))
    res = run_cascade_detailed(ctx, *detectors(cfg), cfg.cascade)
    assert [d.box for d in res.secondary] == [DUET_FRONT]


def test_support_cut_discards_the_residue():
    from crowdcascade.simulator import OracleConfig

    cfg = RunConfig(cascade=CascadeConfig(mask_mode="humanoid"), oracle=OracleConfig(min_support=0.4))
    ctx = SceneContext.build(duet_scene(high_overlap=True))
    res = run_cascade_detailed(ctx, *detectors(cfg), cfg.cascade)
    assert [d.box for d in res.secondary] == [DUET_HIGH_BACK]


def test_well_separated_scene_with_perfect_primary_matches_single_pass():
    scene = generate_scenes(SimulatorConfig(count_range=(5, 12), overlap_density=0.0), 1, 9)[0]
    ctx = SceneContext.build(scene)
    _, s = detectors(RunConfig())
    cfg = CascadeConfig()
    assert run_cascade(ctx, _Perfect(), s, cfg) == single_pass(ctx, _Perfect(), cfg.p_nms)


def test_perfect_primary_leaves_nothing_for_secondary():
    cfg = CascadeConfig(mask_mode="exact", p_nms=0.99, s_nms=0.5)
    _, s = detectors(RunConfig(cascade=cfg))
    for scene in generate_scenes(SimulatorConfig(), 5, 21):
        res = run_cascade_detailed(SceneContext.build(scene), _Perfect(), s, cfg)
        assert res.partition.missed == ()
        assert res.secondary == []


def test_union_preserves_both_lists():
    run = RunConfig()
    p, s = detectors(run)
    for scene in generate_scenes(SimulatorConfig(), 5, 2):
        res = run_cascade_detailed(SceneContext.build(scene), p, s, run.cascade)
        assert res.detections == res.primary + res.secondary
        assert all(d.source is Source.PRIMARY for d in res.primary)
        assert all(d.source is Source.SECONDARY for d in res.secondary)


def test_cross_module_nms_bookkeeping():
    run = RunConfig(cascade=CascadeConfig(mask_mode="fullbox", mask_at="detection"))
    on = RunConfig(cascade=CascadeConfig(mask_mode="fullbox", mask_at="detection", cross_module_nms=True))
    for scene in generate_scenes(SimulatorConfig(), 5, 3):
        ctx = SceneContext.build(scene)
        off_res = run_cascade_detailed(ctx, *detectors(run), run.cascade)
        on_res = run_cascade_detailed(ctx, *detectors(on), on.cascade)
        assert len(off_res.detections) - len(on_res.detections) == on_res.cross_suppressed
        kept = on_res.detections
        assert all(iou(a.box, b.box) <= 0.5 for a, b in itertools.combinations(kept, 2))


def test_detections_round_trip():
    dets = {
        "a": [Detection(BBox(1, 2, 3, 4), 0.5), Detection(BBox(0.5, 0, 9, 9), 1.0, Source.SECONDARY)],
        "b": [],
    }
    buf = io.StringIO()
    write_detections(dets, buf)
    assert read_detections(io.StringIO(buf.getvalue())) == dets
    with pytest.raises(ValueError, match="line 1"):
        read_detections(io.StringIO('{"image_id": "x", "boxes": [[1, 2]]}\n'))
