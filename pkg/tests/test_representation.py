from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjrep.convex_core import steiner_point
from hjrep.hamiltonian import (
    banded_interval, builtin, conjugate, conjugate_domain_bound, domain_interval, epigraph_ball_intersection,
    shifted,
)
from hjrep.representation import (
    banded_grid, extra_property_audit, growth_audit, lipschitz_audit, parameterize, parameterize_many,
    representation_residual, shift_equivariance_gap, stability_gap,
)

SQRT = builtin("sqrt_example")
QUAD = builtin("quadratic")
ZERO = builtin("zero")


def test_parameterize_examples():
    out = parameterize(SQRT, 0.0, 2.0, [1.0, 1.0])
    assert (out.f, out.l) == (1.0, 1.0)
    out = parameterize(ZERO, 0.0, 0.0, [0.0, -2.0])
    assert out.f == pytest.approx(0.0, abs=1e-12)
    assert out.l == pytest.approx(1.0, abs=1e-12)
    assert out.distance == pytest.approx(2.0)
    out = parameterize(ZERO, 0.0, 0.0, [0.0, 0.0])
    assert (out.f, out.l) == (0.0, 0.0)


def test_zero_model_off_axis_anchor():
    # E = {0} x [0, inf); anchor (3, -4) has d = 5 and clamped set {0} x [0, -4 + sqrt(100 - 9)]
    out = parameterize(ZERO, 0.0, 0.0, [3.0, -4.0])
    assert out.f == pytest.approx(0.0, abs=1e-12)
    assert out.l == pytest.approx(0.5 * (-4.0 + math.sqrt(91.0)), abs=1e-9)


def test_batch_matches_hull_reference():
    rng = np.random.default_rng(3)
    for model in (SQRT, QUAD):
        xs = rng.uniform(-2, 2, 60)
        anchors = rng.uniform(-1, 1, (60, 2)) * 10 ** rng.uniform(-2, 3.5, (60, 1))
        e = parameterize_many(model, 0.0, xs, anchors)
        for i in range(60):
            body, d, _ = epigraph_ball_intersection(model, 0.0, xs[i], anchors[i])
            ref = steiner_point(body)
            assert np.linalg.norm(ref - e[i]) <= 1e-7 * max(d, 1e-12) + 1e-12


def test_single_and_batch_agree():
    anchors = np.array([[0.3, -1.0], [-5.0, 2.0], [0.1, 0.5], [40.0, -70.0]])
    batch = parameterize_many(SQRT, 0.2, 1.3, anchors)
    single = np.array([parameterize(SQRT, 0.2, 1.3, a).point for a in anchors])
    assert np.allclose(batch, single, atol=1e-12)


def test_regression_near_duplicate_corners():
    # far anchor whose clamped boundary had nearly coincident corners in reversed order
    t, x = 0.09375, 0.025651029126138675
    a = np.array([-1200.761672926363, -173.15079089226822])
    e = parameterize_many(SQRT, t, x, a[None])[0]
    assert np.all(np.isfinite(e))
    assert abs(e[0]) <= abs(x)
    assert e == pytest.approx([-0.00396, 967.64], rel=1e-3, abs=1e-4)


def test_selection_lies_in_epigraph():
    rng = np.random.default_rng(4)
    for model in (SQRT, QUAD):
        xs = rng.uniform(-2, 2, 200)
        anchors = rng.normal(size=(200, 2)) * 20
        e = parameterize_many(model, 0.3, xs, anchors)
        h = conjugate(model, 0.3, xs, e[:, 0])
        assert np.all(h <= e[:, 1] + 1e-7 * (1 + np.abs(e[:, 1])))


def test_idempotence():
    rng = np.random.default_rng(5)
    anchors = rng.normal(size=(100, 2)) * 5
    e = parameterize_many(SQRT, 0.0, 1.2, anchors)
    again = parameterize_many(SQRT, 0.0, 1.2, e)
    assert np.allclose(again, e, atol=1e-8)


def test_extra_property_on_graph_and_inside():
    rng = np.random.default_rng(6)
    for model in (SQRT, QUAD):
        lo, hi = banded_interval(*domain_interval(model, 0.0, 2.0))
        v = rng.uniform(lo, hi, 200)
        for s in (0.0, 5.0):
            rec = extra_property_audit(model, 0.0, 2.0, np.column_stack([v, np.full(200, s)]))
            assert rec.passed and rec.observed <= 1e-6
    # rows below the epigraph are excluded; parameterize still lands in E
    rec = extra_property_audit(SQRT, 0.0, 2.0, np.array([[0.5, -1.0]]))
    assert rec.samples == 0
    e = parameterize(SQRT, 0.0, 2.0, [0.5, -1.0])
    assert conjugate(SQRT, 0.0, 2.0, e.f) <= e.l + 1e-9


def test_growth_inequalities_exact():
    rng = np.random.default_rng(7)
    for model in (SQRT, QUAD, ZERO):
        for x in (-2.0, 0.0, 0.7):
            anchors = rng.normal(size=(100, 2)) * 10.0 ** rng.uniform(-2, 3, (100, 1))
            rec = growth_audit(model, 0.0, x, anchors)
            assert rec.passed, (model.name, x, rec)


def test_image_of_velocity_in_domain():
    rng = np.random.default_rng(8)
    anchors = rng.normal(size=(300, 2)) * 100
    e = parameterize_many(SQRT, 0.0, 1.5, anchors)
    assert np.all(np.abs(e[:, 0]) <= 1.5)
    assert np.abs(e[:, 0]).max() <= conjugate_domain_bound(SQRT, 0.0, 1.5)


def test_representation_residual_examples():
    grid = banded_grid(SQRT, 0.0, 2.0, 1e-3)
    assert float(SQRT.H(0.0, 2.0, 1.0)) == pytest.approx((math.sqrt(2) - 1) ** 2)
    assert representation_residual(SQRT, 0.0, 2.0, 1.0, grid) <= 1e-3
    assert representation_residual(ZERO, 0.0, 0.5, 3.0, banded_grid(ZERO, 0.0, 0.5)) == 0.0
    grid = banded_grid(QUAD, 0.0, 0.0, 1e-3)
    assert representation_residual(QUAD, 0.0, 0.0, 2.0, grid) <= 1e-6


def test_residual_shrinks_with_grid():
    coarse = representation_residual(SQRT, 0.0, 1.0, 2.5, banded_grid(SQRT, 0.0, 1.0, 1e-1))
    fine = representation_residual(SQRT, 0.0, 1.0, 2.5, banded_grid(SQRT, 0.0, 1.0, 1e-3))
    assert fine <= coarse


def test_lipschitz_audit_small():
    rec = lipschitz_audit(SQRT, 2.0, 150, seed=1)
    assert rec.passed and rec.bound == 20.0
    d = rec.as_dict()
    assert {"bound", "observed", "margin", "samples", "seed"} <= set(d)


def test_zero_model_anchor_lipschitz():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(300, 2)) * 5
    b = a + rng.normal(size=(300, 2)) * 0.5
    ea = parameterize_many(ZERO, 0.0, 0.0, a)
    eb = parameterize_many(ZERO, 0.0, 0.0, b)
    ratio = np.linalg.norm(ea - eb, axis=1) / np.linalg.norm(a - b, axis=1)
    assert ratio.max() <= 5.0


def test_stability_gaps():
    anchors = np.random.default_rng(10).normal(size=(20, 2)) * 3
    ge, gh = stability_gap(SQRT, SQRT, [0.0], [1.0], anchors, [0.5])
    assert ge == 0.0 and gh == 0.0
    gaps = [stability_gap(SQRT, shifted(SQRT, 1.0 / i), [0.0, 0.5], [-1.0, 1.5], anchors, [0.0, 1.0])[0]
            for i in (1, 2, 4, 8, 16)]
    assert all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))
    # clamp (constant 5) then Steiner point (constant m = 2) against a Hausdorff shift of 1/i
    assert all(g <= 10.0 / i + 1e-9 for g, i in zip(gaps, (1, 2, 4, 8, 16)))
    assert shift_equivariance_gap(SQRT, 0.25, [0.0, 0.5], [-1.0, 0.3, 2.0], anchors) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 3))
def test_shift_equivariance_property(x, av, aeta, delta):
    a = np.array([[av, aeta]])
    base = parameterize_many(SQRT, 0.0, x, a)[0]
    moved = parameterize_many(shifted(SQRT, delta), 0.0, x, a - [0.0, delta])[0]
    assert np.allclose(moved, base - [0.0, delta], atol=1e-8 * (1 + abs(aeta)))
