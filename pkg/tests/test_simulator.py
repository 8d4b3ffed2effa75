import io
import itertools

import numpy as np
import pytest

from crowdcascade.geometry import BBox, iou
from crowdcascade.masking import FULLBOX, rasterize_mask
from crowdcascade.roi import PyramidSpec
from crowdcascade.simulator import (
    DUET_BACK,
    DUET_FRONT,
    DUET_HIGH_BACK,
    OracleConfig,
    OracleDetector,
    SceneContext,
    SimulatorConfig,
    duet_scene,
    generate_scenes,
    label_map,
    make_scene,
    oracle_detect,
    read_scenes,
    render_saliency,
    scene_seed,
    silhouette_cells,
    visible_fraction,
    visible_fractions,
    write_scenes,
)

BACK, FRONT = 0, 1  # duet instance order is back-to-front


def _suppressed(ctx, masks):
    from crowdcascade.cascade import apply_masks

    return apply_masks(ctx, masks, "features")


def _dump(scenes):
    buf = io.StringIO()
    write_scenes(scenes, buf)
    return buf.getvalue()


def test_same_seed_gives_identical_bytes():
    cfg = SimulatorConfig(count_range=(5, 10))
    assert _dump(generate_scenes(cfg, 5, 7)) == _dump(generate_scenes(cfg, 5, 7))
    assert _dump(generate_scenes(cfg, 5, 7)) != _dump(generate_scenes(cfg, 5, 8))


def test_scene_streams_are_independent_of_count():
    cfg = SimulatorConfig(count_range=(5, 10))
    assert generate_scenes(cfg, 3, 1) == generate_scenes(cfg, 5, 1)[:3]
    assert scene_seed(1, 0) != scene_seed(1, 1)


def test_zero_overlap_density_gives_disjoint_boxes():
    cfg = SimulatorConfig(count_range=(5, 15), overlap_density=0.0)
    for scene in generate_scenes(cfg, 10, 3):
        boxes = [i.full for i in scene.instances]
        assert all(iou(a, b) == 0.0 for a, b in itertools.combinations(boxes, 2))


def test_generated_scenes_respect_config():
    cfg = SimulatorConfig(count_range=(10, 30))
    for scene in generate_scenes(cfg, 10, 0):
        assert len(scene.instances) + scene.dropped in range(10, 31)
        W, H = scene.canvas
        for inst in scene.instances:
            b = inst.full
            assert 0 <= b.x1 and b.x2 <= W and 0 <= b.y1 and b.y2 <= H
            assert cfg.height_range[0] <= b.height <= cfg.height_range[1]
        assert (visible_fractions(scene) >= cfg.min_visibility - 1e-12).all()


def test_count_must_be_positive():
    with pytest.raises(ValueError):
        generate_scenes(SimulatorConfig(), 0, 0)


def test_duet_closed_form():
    s = duet_scene()
    assert iou(DUET_FRONT, DUET_BACK) == pytest.approx(1 / 3)
    assert visible_fraction(BACK, s) == pytest.approx(0.5)
    assert visible_fraction(FRONT, s) == 1.0
    assert s.instances[BACK].visible == BBox(200, 100, 250, 300)


def test_high_overlap_duet_closed_form():
    s = duet_scene(high_overlap=True)
    assert iou(DUET_FRONT, DUET_HIGH_BACK) == pytest.approx(70 / 130)
    assert visible_fraction(BACK, s) == pytest.approx(0.3)


def test_visible_fraction_examples():
    s = duet_scene()
    everything = np.ones(s.shape, dtype=bool)
    assert visible_fraction(BACK, s, everything) == 0.0
    with pytest.raises(IndexError):
        visible_fraction(2, s)


def test_masking_the_occluder_reveals_the_back_instance():
    s = duet_scene()
    m = rasterize_mask(DUET_FRONT, FULLBOX, s.shape)
    assert visible_fraction(BACK, s, m) == 1.0
    assert visible_fraction(FRONT, s, m) == 0.0


def _visible_count(scene, index, mask):
    return int(np.count_nonzero((label_map(scene) == index) & ~mask))


def test_visible_cells_shrink_as_masks_grow(rng):
    scene = generate_scenes(SimulatorConfig(count_range=(6, 12)), 1, 4)[0]
    n = len(scene.instances)
    mask = np.zeros(scene.shape, dtype=bool)
    prev = [_visible_count(scene, i, mask) for i in range(n)]
    for _ in range(8):
        x, y = rng.integers(0, 600), rng.integers(0, 440)
        mask[y : y + 40, x : x + 40] = True
        cur = [_visible_count(scene, i, mask) for i in range(n)]
        assert all(c <= p for c, p in zip(cur, prev))
        prev = cur


def test_fraction_nonincreasing_when_masks_cover_only_visible_cells(rng):
    scene = generate_scenes(SimulatorConfig(count_range=(6, 12)), 1, 5)[0]
    lm = label_map(scene)
    for i in range(len(scene.instances)):
        own = np.argwhere(lm == i)
        mask = np.zeros(scene.shape, dtype=bool)
        prev = visible_fraction(i, scene, mask)
        for chunk in np.array_split(rng.permutation(len(own)), 4):
            mask[tuple(own[chunk].T)] = True
            cur = visible_fraction(i, scene, mask)
            assert cur <= prev + 1e-12
            prev = cur
        assert prev == 0.0


def test_render_saliency_examples():
    empty = make_scene("e", [], (50, 40), FULLBOX)
    assert not render_saliency(empty, 1).values.any()

    one = make_scene("o", [BBox(10, 5, 30, 25)], (50, 40), FULLBOX)
    g = render_saliency(one, 1)
    assert np.array_equal(g.values[0] != 0, rasterize_mask(BBox(10, 5, 30, 25), FULLBOX, (40, 50)))

    d = duet_scene()
    g = render_saliency(d, 4)
    vals = g.values[0]
    assert set(np.unique(vals)) == {0.0, 1.0, 2.0}
    assert np.array_equal(vals == BACK + 1, label_map(d, 4) == BACK)


def test_render_saliency_after_suppression_drops_instance():
    d = duet_scene()
    ctx = _suppressed(SceneContext.build(d), [(DUET_FRONT, FULLBOX)])
    for grid in ctx.grids.values():
        assert not (grid.values == FRONT + 1).any()


def test_oracle_examples_on_duet():
    ctx = SceneContext.build(duet_scene())
    dets = oracle_detect(ctx, OracleConfig(visibility_threshold=0.3))
    assert [(d.box, d.score) for d in dets] == [(DUET_BACK, 0.5), (DUET_FRONT, 1.0)]
    dets = oracle_detect(ctx, OracleConfig(visibility_threshold=0.6))
    assert [(d.box, d.score) for d in dets] == [(DUET_FRONT, 1.0)]


@pytest.mark.parametrize("roi_level", ["pixel", "hrra", "fpn"])
def test_oracle_after_masking_the_front_instance(roi_level):
    ctx = _suppressed(SceneContext.build(duet_scene()), [(DUET_FRONT, FULLBOX)])
    dets = oracle_detect(ctx, OracleConfig(visibility_threshold=0.3), roi_level)
    assert [(d.box, d.score) for d in dets] == [(DUET_BACK, 1.0)]


def test_oracle_jitter_is_seeded():
    scene = generate_scenes(SimulatorConfig(count_range=(5, 8)), 1, 2)[0]
    ctx = SceneContext.build(scene)
    det = OracleDetector(OracleConfig(jitter_sigma=2.0))
    a, b = det.detect(ctx), det.detect(ctx)
    assert a == b
    assert any(d.box != inst.full for d, inst in zip(a, scene.instances))
    other = OracleDetector(OracleConfig(jitter_sigma=2.0), stream=1).detect(ctx)
    assert [d.box for d in other] != [d.box for d in a]


def test_oracle_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(visibility_threshold=0.0)
    with pytest.raises(ValueError):
        OracleConfig(jitter_sigma=-1)
    with pytest.raises(ValueError):
        OracleConfig(score_map="cubic")
    with pytest.raises(ValueError):
        oracle_detect(SceneContext.build(duet_scene()), OracleConfig(), roi_level="p3")


def test_hrra_reads_visibility_on_the_finest_level():
    s = duet_scene(high_overlap=True)
    ctx = SceneContext.build(s, PyramidSpec())
    pixel = oracle_detect(ctx, OracleConfig(0.3), "pixel")
    assert [d.score for d in pixel] == pytest.approx([0.3, 1.0])
    # stride 4: the back box spans 25 cell centers, 7 of them visible
    assert visible_fractions(s, None, 4)[BACK] == pytest.approx(7 / 25)
    hrra = oracle_detect(ctx, OracleConfig(0.3), "hrra")
    assert [d.box for d in hrra] == [DUET_FRONT]


def test_scene_record_round_trip():
    scenes = generate_scenes(SimulatorConfig(count_range=(3, 9)), 4, 11)
    text = _dump(scenes)
    back = read_scenes(io.StringIO(text))
    assert back == scenes
    assert _dump(back) == text


def test_read_scenes_reports_line():
    with pytest.raises(ValueError, match="line 2"):
        read_scenes(io.StringIO(_dump([duet_scene()]) + '{"ID": "x"}\n'))


def test_silhouette_cells_match_template():
    s = duet_scene()
    assert silhouette_cells(s, BACK).sum() == 100 * 200
