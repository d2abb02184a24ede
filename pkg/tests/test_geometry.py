import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spcantor.geometry import (
    Box,
    SPCube,
    SPoint,
    boundary_dist,
    corner_subcube,
    sp_dilate,
    sp_dist,
    sp_norm,
    temporal_reflect,
)

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)
svals = st.floats(min_value=0.55, max_value=1.0)


def pt(x, t):
    return SPoint((x,), t)


def test_dist_examples():
    # both branches equal 1
    assert sp_dist(pt(0.0, 0.0), pt(1.0, 1.0), 0.8) == 1.0
    # max{0.5, 0.2^(2/3)} = 0.5
    assert sp_dist(pt(0.0, 0.0), pt(0.5, 0.2), 0.75) == pytest.approx(0.5, abs=0)
    assert sp_dist(pt(0.3, 0.4), pt(0.3, 0.4), 1.0) == 0.0


def test_norm_examples():
    assert sp_norm(pt(0.0, 0.0), 0.9) == 0.0
    assert sp_norm(pt(1.0, 0.0), 0.9) == 1.0
    assert sp_norm(pt(0.0, 4.0), 1.0) == pytest.approx(2.0, abs=1e-15)


def test_s_out_of_range():
    with pytest.raises(ValueError):
        sp_dist(pt(0, 0), pt(1, 1), 0.0)
    with pytest.raises(ValueError):
        sp_norm(pt(0, 0), 1.5)


@settings(max_examples=300, derandomize=True)
@given(finite, finite, finite, finite, finite, finite, svals)
def test_metric_axioms(x1, t1, x2, t2, x3, t3, s):
    p, q, r = pt(x1, t1), pt(x2, t2), pt(x3, t3)
    dpq = sp_dist(p, q, s)
    assert dpq >= 0.0
    assert dpq == sp_dist(q, p, s)
    if (x1, t1) == (x2, t2):
        assert dpq == 0.0
    assert sp_dist(p, r, s) <= dpq + sp_dist(q, r, s) + 1e-12


@settings(max_examples=200, derandomize=True)
@given(finite, finite, finite, finite, svals,
       st.floats(min_value=1e-3, max_value=10.0))
def test_homogeneity(x1, t1, x2, t2, s, lam):
    p, q = pt(x1, t1), pt(x2, t2)
    dp = pt(lam * x1, lam ** (2 * s) * t1)
    dq = pt(lam * x2, lam ** (2 * s) * t2)
    assert sp_dist(dp, dq, s) == pytest.approx(lam * sp_dist(p, q, s), rel=1e-12)


@settings(max_examples=200, derandomize=True)
@given(finite, finite, finite, finite, svals)
def test_comparability(x1, t1, x2, t2, s):
    p, q = pt(x1, t1), pt(x2, t2)
    d = sp_dist(p, q, s)
    quad = math.sqrt((x1 - x2) ** 2 + abs(t1 - t2) ** (1.0 / s))
    assert d <= quad + 1e-12
    assert quad <= math.sqrt(2.0) * d + 1e-12


def test_dilate_examples():
    c = SPCube(SPoint((0.0,), 0.0), 1.0, 1.0)
    assert sp_dilate(c, 1.0) == c
    d = sp_dilate(c, 2.0)
    assert d.side == 2.0
    assert d.t_extent == pytest.approx(4.0)
    # concentric
    assert d.center().x == c.center().x
    assert d.center().t == pytest.approx(c.center().t)
    # semigroup
    e1 = sp_dilate(sp_dilate(c, 3.0), 3.0)
    e2 = sp_dilate(c, 9.0)
    assert e1.side == pytest.approx(e2.side, rel=1e-15)
    assert e1.corner.t == pytest.approx(e2.corner.t, rel=1e-12)
    with pytest.raises(ValueError):
        sp_dilate(c, 0.0)


def test_temporal_reflect():
    p = pt(0.3, 0.5)
    assert temporal_reflect(p, 0.5) == p
    assert temporal_reflect(temporal_reflect(p, 0.2), 0.2) == p
    assert temporal_reflect(pt(0.1, 0.2), 0.5).t == pytest.approx(0.8)
    # reflection preserves distances between reflected pairs
    q = pt(0.9, 0.1)
    s = 0.75
    assert sp_dist(temporal_reflect(p, 0.4), temporal_reflect(q, 0.4), s) == (
        pytest.approx(sp_dist(p, q, s), rel=1e-15)
    )


def test_corner_subcube():
    c = SPCube(SPoint((0.0, 0.0), 0.0), 1.0, 1.0)
    up = corner_subcube(c, "up-ri")
    assert up.side == 0.25
    assert up.corner.x == (0.75, 0.75)
    assert up.corner.t == pytest.approx(1.0 - 0.25 ** 2)
    lo = corner_subcube(c, "lo-le")
    assert lo.corner == c.corner
    assert lo.side == 0.25
    # disjoint: separated by at least side/2 in every spatial axis
    assert up.corner.x[0] - (lo.corner.x[0] + lo.side) >= c.side / 2
    with pytest.raises(ValueError):
        corner_subcube(c, "middle")


def _boundary_dist_sampled(p, cube, s, m=400):
    """Oracle: dense sampling of the boundary faces."""
    box = cube.to_box()
    best = math.inf
    us = np.linspace(0.0, 1.0, m)
    for i in range(cube.n):
        for c in (box.x_lo[i], box.x_hi[i]):
            for u in us:
                x = [box.x_lo[j] + u * (box.x_hi[j] - box.x_lo[j])
                     for j in range(cube.n)]
                x[i] = c
                for v in np.linspace(0, 1, 40):
                    t = box.t_lo + v * (box.t_hi - box.t_lo)
                    best = min(best, sp_dist(p, SPoint(tuple(x), t), s))
    for c in (box.t_lo, box.t_hi):
        for u in us:
            x = [box.x_lo[j] + u * (box.x_hi[j] - box.x_lo[j])
                 for j in range(cube.n)]
            best = min(best, sp_dist(p, SPoint(tuple(x), c), s))
    return best


def test_boundary_dist():
    c = SPCube(SPoint((0.0,), 0.0), 1.0, 1.0)
    # center of the unit cube: nearest face is spatial at distance 1/2
    assert boundary_dist(SPoint((0.5,), 0.5), c) == pytest.approx(0.5)
    # on a face
    assert boundary_dist(SPoint((1.0,), 0.3), c) == 0.0
    # outside, against the sampling oracle
    s = 0.75
    c2 = SPCube(SPoint((0.0,), 0.0), 1.0, s)
    for p in (SPoint((1.7,), 0.5), SPoint((0.4,), -0.9), SPoint((-0.3,), 1.8)):
        exact = boundary_dist(p, c2)
        sampled = _boundary_dist_sampled(p, c2, s)
        assert exact <= sampled + 1e-12
        assert exact == pytest.approx(sampled, rel=5e-3)


def test_box_helpers():
    b = Box((0.0,), (1.0,), 0.0, 2.0)
    assert b.volume() == 2.0
    assert b.intersect(Box((0.5,), (1.5,), 1.0, 3.0)) == Box((0.5,), (1.0,), 1.0, 2.0)
    assert b.intersect(Box((2.0,), (3.0,), 0.0, 1.0)) is None
    assert b.contains_point(SPoint((0.5,), 1.0))
    assert not b.contains_point(SPoint((0.5,), 2.5))
