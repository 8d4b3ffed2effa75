import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from conftest import bboxes
from crowdcascade.geometry import BBox
from crowdcascade.masking import FULLBOX, FeatureGrid, rasterize_mask, suppress
from crowdcascade.roi import PyramidSpec, bilinear, fpn_level, hrra_level, roi_align
from oracles import roi_align_dense

SPEC = PyramidSpec(k_min=2, k_max=5, k0=4, canonical_size=224)


@pytest.mark.parametrize("side, level", [(224, 4), (112, 3), (8, 2), (448, 5), (5000, 5)])
def test_fpn_level(side, level):
    assert fpn_level(BBox(0, 0, side, side), SPEC) == level


@pytest.mark.parametrize("side", [8, 224, 1000])
def test_hrra_level_is_highest_resolution(side):
    assert hrra_level(BBox(0, 0, side, side), SPEC) == 2


def test_pyramid_spec_validation():
    with pytest.raises(ValueError):
        PyramidSpec(k_min=3, k_max=5, k0=2)
    assert SPEC.levels == [2, 3, 4, 5]
    assert [SPEC.stride(k) for k in SPEC.levels] == [4, 8, 16, 32]


@given(bboxes(min_size=1, max_size=500), st.floats(1.0, 4.0))
def test_fpn_level_monotone_in_scale(box, grow):
    bigger = BBox(box.x1, box.y1, box.x1 + box.width * grow, box.y1 + box.height * grow)
    assert fpn_level(bigger, SPEC) >= fpn_level(box, SPEC)
    assert hrra_level(bigger, SPEC) == hrra_level(box, SPEC)


def test_roi_align_center_of_four_cells():
    g = FeatureGrid(np.array([[1.0, 2.0], [3.0, 4.0]]), 1)
    out = roi_align(g, BBox(0.5, 0.5, 1.5, 1.5), 1, 1, 1)
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == pytest.approx(2.5, abs=1e-12)


def test_roi_align_exact_cell_hit():
    vals = np.arange(12.0).reshape(3, 4)
    g = FeatureGrid(vals, 1)
    # a box centred on cell (1, 2)'s center (2.5, 1.5)
    out = roi_align(g, BBox(2.0, 1.0, 3.0, 2.0), 1, 1, 1)
    assert out[0, 0, 0] == pytest.approx(vals[1, 2])


def test_roi_align_constant_grid(rng):
    g = FeatureGrid(np.full((2, 10, 12), 3.5), 4)
    for _ in range(20):
        x1, y1 = rng.uniform(0, 30, 2)
        box = BBox(x1, y1, x1 + rng.uniform(1, 16), y1 + rng.uniform(1, 9))
        out = roi_align(g, box, int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 4)))
        assert np.allclose(out, 3.5, atol=1e-12)


def test_roi_align_outside_grid_is_zero():
    g = FeatureGrid(np.ones((4, 4)), 1)
    assert not roi_align(g, BBox(10, 10, 14, 14), 2, 2).any()


def test_roi_align_validation():
    g = FeatureGrid(np.ones((4, 4)), 1)
    with pytest.raises(ValueError):
        roi_align(g, BBox(0, 0, 2, 2), 0, 1)


def test_roi_align_matches_dense_oracle(rng):
    for _ in range(25):
        h, w = (int(v) for v in rng.integers(1, 12, 2))
        stride = int(rng.choice([1, 2, 4]))
        vals = rng.normal(size=(2, h, w))
        x1 = rng.uniform(-2, w * stride)
        y1 = rng.uniform(-2, h * stride)
        box = BBox(x1, y1, x1 + rng.uniform(0.5, w * stride), y1 + rng.uniform(0.5, h * stride))
        oh, ow, n = (int(v) for v in rng.integers(1, 4, 3))
        got = roi_align(FeatureGrid(vals, stride), box, oh, ow, n)
        ref = np.array(roi_align_dense(vals.tolist(), stride, box.as_tuple(), oh, ow, n))
        assert np.allclose(got, ref, atol=1e-9)


def test_bilinear_linear_in_values(rng):
    a, b = rng.normal(size=(2, 1, 5, 6))
    x = rng.uniform(-1, 7, 30)
    y = rng.uniform(-1, 6, 30)
    lhs = bilinear(2.0 * a - 3.0 * b, x, y)
    rhs = 2.0 * bilinear(a, x, y) - 3.0 * bilinear(b, x, y)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_roi_align_zero_inside_suppressed_region():
    g = FeatureGrid(np.ones((1, 20, 20)), 2)
    region = BBox(8, 8, 32, 32)
    sup = suppress(g, rasterize_mask(region, FULLBOX, g.shape2d, g.stride))
    # one cell (2 px) of margin inside the suppressed region
    out = roi_align(sup, BBox(12, 12, 28, 28), 3, 3, 2)
    assert not out.any()
    assert roi_align(g, BBox(12, 12, 28, 28), 3, 3, 2).all()
