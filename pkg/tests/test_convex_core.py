from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjrep.convex_core import (
    Ball, DegenerateBodyError, PointCloudBody, Polygon, clamp_intersection, distance_to, hausdorff, steiner_point,
    steiner_point_quadrature, support,
)

TRIANGLE = Polygon(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))


def test_support_examples():
    assert support(Ball(np.array([1.0, 2.0]), 3.0), [1.0, 0.0]) == pytest.approx(4.0, abs=1e-12)
    assert support(Polygon.rectangle((0, 0), (2, 4)), [0.0, 1.0]) == pytest.approx(4.0, abs=1e-12)
    assert support(TRIANGLE, np.array([1.0, 1.0]) / math.sqrt(2)) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


def test_distance_examples():
    assert distance_to(Ball(np.zeros(2), 1.0), [3.0, 0.0]) == pytest.approx(2.0, abs=1e-12)
    assert distance_to(TRIANGLE, [0.2, 0.2]) == 0.0
    assert distance_to(TRIANGLE, [1.0, 1.0]) == pytest.approx(math.sqrt(2) / 2, abs=1e-12)


def test_degenerate_body_rejected():
    with pytest.raises(DegenerateBodyError, match="degenerate body"):
        Polygon(np.zeros((0, 2)))
    with pytest.raises(DegenerateBodyError):
        PointCloudBody(np.array([[np.nan, 0.0, 0.0]]))


def test_clamp_examples():
    a = np.array([0.2, 0.3])
    single = clamp_intersection(TRIANGLE, a)
    assert np.allclose(single.vertices, a[None])
    ball = Ball(np.zeros(2), 1.0)
    assert clamp_intersection(ball, [3.0, 0.0]) is ball
    seg = Polygon(np.array([[0.0, 0.0], [0.0, 50.0]]))
    out = clamp_intersection(seg, [0.0, -2.0])
    assert np.allclose(np.sort(out.vertices[:, 1]), [0.0, 2.0])
    assert np.allclose(out.vertices[:, 0], 0.0)


def test_steiner_examples():
    assert np.allclose(steiner_point(Ball(np.array([1.0, 2.0]), 3.0)), [1, 2], atol=1e-8)
    assert np.allclose(steiner_point(Polygon.rectangle((0, 0), (2, 4))), [1, 2], atol=1e-8)
    assert np.allclose(steiner_point(TRIANGLE), [0.375, 0.375], atol=1e-5)


def test_triangle_steiner_matches_sphere_quadrature():
    # independent route: support-function quadrature with 10^5 nodes
    q = steiner_point_quadrature(TRIANGLE, 100_000)
    assert np.allclose(q, [0.375, 0.375], atol=1e-5)


def test_steiner_point_cloud_3d_cube_center():
    cube = PointCloudBody(np.array([[x, y, z] for x in (0, 2) for y in (0, 4) for z in (0, 6)], dtype=float))
    assert np.allclose(steiner_point(cube), [1, 2, 3], atol=1e-2)


def test_hausdorff_examples():
    k = Polygon.rectangle((0, 0), (1, 2))
    assert hausdorff(k, k) == 0.0
    assert hausdorff(Ball(np.zeros(2), 1.0), Ball(np.zeros(2), 2.0)) == pytest.approx(1.0)
    rng = np.random.default_rng(3)
    for _ in range(100):
        x, y = rng.normal(size=2), rng.normal(size=2)
        r, s = rng.uniform(0.1, 2, 2)
        h = hausdorff(Ball(x, r).to_polygon(), Ball(y, s).to_polygon())
        assert h <= np.linalg.norm(x - y) + abs(r - s) + 1e-9


def test_hausdorff_symmetric_polygons():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a, b = Polygon(rng.normal(size=(8, 2))), Polygon(rng.normal(size=(6, 2)))
        assert hausdorff(a, b) == pytest.approx(hausdorff(b, a), abs=1e-12)


points = st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=3, max_size=12)


@settings(max_examples=60, deadline=None)
@given(points, st.tuples(st.floats(-10, 10), st.floats(-10, 10)))
def test_nearest_is_member_and_support_dominates(pts, z):
    body = Polygon(np.array(pts))
    p = body.nearest(np.array(z))
    assert body.contains(p, tol=1e-7)
    u = np.array([0.6, -0.8])
    assert support(body, u) >= u @ p - 1e-9


@settings(max_examples=60, deadline=None)
@given(points, st.tuples(st.floats(-3, 3), st.floats(-3, 3)))
def test_steiner_membership_and_translation(pts, shift):
    body = Polygon(np.array(pts))
    s = steiner_point(body)
    assert distance_to(body, s) <= 1e-7 * max(1.0, body.diameter())
    moved = steiner_point(body.translate(np.array(shift)))
    assert np.allclose(moved, s + np.array(shift), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(points, st.tuples(st.floats(-8, 8), st.floats(-8, 8)), st.tuples(st.floats(-3, 3), st.floats(-3, 3)))
def test_clamp_translation_equivariance(pts, a, shift):
    body = Polygon(np.array(pts))
    a, shift = np.array(a), np.array(shift)
    base = clamp_intersection(body, a)
    moved = clamp_intersection(body.translate(shift), a + shift)
    assert hausdorff(base.translate(shift), moved) <= 1e-7 * max(1.0, body.diameter())


def test_support_is_sublinear():
    rng = np.random.default_rng(11)
    body = Polygon(rng.normal(size=(10, 2)))
    for _ in range(50):
        u, w = rng.normal(size=2), rng.normal(size=2)
        s = lambda d: float(body.support_many(d[None])[0])  # noqa: E731
        assert s(u + w) <= s(u) + s(w) + 1e-12
        assert s(3.0 * u) == pytest.approx(3.0 * s(u))
