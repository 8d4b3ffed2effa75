import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import hypothesis.strategies as st
import numpy as np
import pytest

from crowdcascade.geometry import BBox


@st.composite
def bboxes(draw, lo=0.0, hi=100.0, min_size=0.5, max_size=60.0):
    x = draw(st.floats(lo, hi, allow_nan=False))
    y = draw(st.floats(lo, hi, allow_nan=False))
    w = draw(st.floats(min_size, max_size, allow_nan=False))
    h = draw(st.floats(min_size, max_size, allow_nan=False))
    return BBox(x, y, x + w, y + h)


def random_boxes(rng: np.random.Generator, n: int, span: float = 60.0, integer: bool = False) -> list[BBox]:
    out = []
    for _ in range(n):
        x, y = rng.uniform(0, span, 2)
        w, h = rng.uniform(2, 30, 2)
        if integer:
            x, y, w, h = (float(round(v)) or 1.0 for v in (x, y, w, h))
        out.append(BBox(float(x), float(y), float(x + w), float(y + h)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_eval_case(rng: np.random.Generator, max_images: int = 10, max_boxes: int = 20):
    """Random small evaluation instance with duplicated scores and ignore regions.

    Returns ``(dets, gts, images)`` where ``images`` is the plain-tuple view
    consumed by the brute-force AP oracle.
    """
    from crowdcascade.annotations import AnnotationSet, Instance
    from crowdcascade.suppression import Detection

    n_img = int(rng.integers(1, max_images + 1))
    dets, gts, images = {}, [], []
    score_pool = np.round(rng.uniform(0.05, 1.0, 6), 2)
    for i in range(n_img):
        g = random_boxes(rng, int(rng.integers(0, 6)), 50, integer=True)
        ign = [bool(rng.random() < 0.15) for _ in g]
        if i == 0 and (not g or all(ign)):
            g, ign = g + [BBox(0, 0, 20, 20)], ign + [False]
        d = []
        for _ in range(int(rng.integers(0, max_boxes + 1))):
            if g and rng.random() < 0.6:
                base = g[int(rng.integers(len(g)))]
                dx, dy = rng.integers(-4, 5, 2)
                box = base.shifted(float(dx), float(dy))
            else:
                box = random_boxes(rng, 1, 50, integer=True)[0]
            score = float(score_pool[rng.integers(len(score_pool))]) if rng.random() < 0.5 else float(rng.random())
            d.append(Detection(box, score))
        iid = f"im{i}"
        dets[iid] = d
        gts.append(AnnotationSet(iid, tuple(Instance(b, None, x) for b, x in zip(g, ign))))
        images.append(([(x.score, x.box.as_tuple()) for x in d], [b.as_tuple() for b in g], ign))
    return dets, gts, images


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
