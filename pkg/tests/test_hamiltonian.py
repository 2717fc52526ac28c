from __future__ import annotations

import math

import numpy as np
import pytest

from hjrep.hamiltonian import (
    BAND, CapTooLowError, HamiltonianModel, ModelError, banded_interval, builtin, builtin_names, check_model,
    conjugate, conjugate_domain_bound, conjugate_numeric, domain_interval, epigraph_slice, hausdorff_slice_gap,
    linear_drift, shifted,
)

SQRT = builtin("sqrt_example")


def plain_quadratic():
    return HamiltonianModel("plain_quadratic", 1, lambda t, x, p: 0.5 * np.asarray(p, dtype=float) ** 2
                            + 0.0 * np.asarray(x, dtype=float), lambda t: 50.0, lambda t, R: 0.0)


def test_registry_names():
    assert set(builtin_names()) >= {"sqrt_example", "zero", "quadratic", "linear_drift", "shifted"}
    with pytest.raises(KeyError):
        builtin("nope")


def test_sqrt_conjugate_examples():
    assert conjugate(SQRT, 0.0, 2.0, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert conjugate(SQRT, 0.0, 1.0, 1.5) == math.inf
    assert conjugate(SQRT, 0.0, 0.0, 0.0) == 0.0
    assert conjugate_numeric(SQRT, 0.0, 2.0, 1.0) == pytest.approx(1.0, abs=1e-6)
    assert conjugate_numeric(SQRT, 0.0, 1.0, 1.5) == math.inf
    assert conjugate_numeric(SQRT, 0.0, 0.0, 0.0) == pytest.approx(0.0, abs=1e-12)


def test_numeric_quadratic_against_brute_force():
    model = plain_quadratic()
    p = np.arange(-100.0, 100.0 + 1e-4 / 2, 1e-4)
    oracle = float(np.max(3.0 * p - 0.5 * p * p))
    assert oracle == pytest.approx(4.5, abs=1e-8)
    assert conjugate_numeric(model, 0.0, 0.0, 3.0) == pytest.approx(oracle, abs=1e-8)


def test_conjugate_lower_bound_and_domain_bound():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.uniform(-2, 2)
        v = rng.uniform(-abs(x), abs(x))
        h0 = abs(float(SQRT.H(0.0, x, 0.0)))
        assert conjugate_numeric(SQRT, 0.0, x, v) >= -h0 - 1e-12
    assert conjugate_domain_bound(SQRT, 0.0, 2.0) == 3.0
    assert conjugate_domain_bound(SQRT, 0.0, 0.0) == 1.0
    q = builtin("quadratic", lip=7.0)
    assert conjugate_domain_bound(q, 0.0, -1.5) == pytest.approx(7.0 * 2.5)


def test_conjugate_infinite_beyond_growth_window():
    for x in (-2.0, 0.5, 1.0):
        r = conjugate_domain_bound(SQRT, 0.0, x)
        assert conjugate_numeric(SQRT, 0.0, x, 1.01 * r) == math.inf
        assert conjugate_numeric(SQRT, 0.0, x, -1.01 * r) == math.inf


def test_nonconvex_model_detected():
    bad = HamiltonianModel("bad", 1, lambda t, x, p: -np.asarray(p, dtype=float) ** 2, lambda t: 1.0,
                           lambda t, R: 0.0)
    with pytest.raises(ModelError):
        conjugate_numeric(bad, 0.0, 0.0, 0.0)
    with pytest.raises(ModelError):
        check_model(bad, [0.0])


def test_check_model_on_builtins():
    for name in ("sqrt_example", "zero", "quadratic"):
        worst = check_model(builtin(name), [0.0, 0.5], n_samples=100)
        assert worst["convexity"] <= 1e-9


def test_fenchel_young_and_biconjugation():
    rng = np.random.default_rng(1)
    x = 1.5
    lo, hi = banded_interval(*domain_interval(SQRT, 0.0, x))
    vs = np.linspace(lo, hi, 20001)
    hs = conjugate(SQRT, 0.0, x, vs)
    for p in rng.uniform(-3, 3, 25):
        hp = float(SQRT.H(0.0, x, p))
        assert np.all(hp + hs >= p * vs - 1e-9)
        assert float(np.max(p * vs - hs)) == pytest.approx(hp, abs=2e-3)


def test_conjugate_convex_in_v():
    x = 2.0
    lo, hi = banded_interval(*domain_interval(SQRT, 0.0, x))
    rng = np.random.default_rng(2)
    a, b = rng.uniform(lo, hi, (2, 200))
    mid = conjugate(SQRT, 0.0, x, 0.5 * (a + b))
    assert np.all(mid <= 0.5 * (conjugate(SQRT, 0.0, x, a) + conjugate(SQRT, 0.0, x, b)) + 1e-12)


def test_shift_drops_conjugate_exactly():
    delta = 0.37
    sh = shifted(SQRT, delta)
    v = np.linspace(-1.9, 1.9, 11)
    assert np.array_equal(conjugate(sh, 0.0, 2.0, v), conjugate(SQRT, 0.0, 2.0, v) - delta)
    assert conjugate_numeric(sh, 0.0, 2.0, 1.0) == pytest.approx(1.0 - delta, abs=1e-6)


def test_epigraph_slice_examples():
    zero = builtin("zero")
    sl = epigraph_slice(zero, 0.0, 0.3, 5.0)
    assert np.allclose(sl.body.vertices[:, 0], 0.0)
    assert np.allclose(np.sort(sl.body.vertices[:, 1]), [0.0, 5.0])
    sl = epigraph_slice(SQRT, 0.0, 2.0, 10.0)
    v, eta = sl.body.vertices.T
    assert np.all(eta <= 10.0 + 1e-12)
    assert np.all(conjugate(SQRT, 0.0, 2.0, v) <= eta + 1e-9)
    with pytest.raises(CapTooLowError, match="cap too low"):
        epigraph_slice(builtin("quadratic"), 0.0, 0.0, -1.0)


def test_quadratic_slice_membership_grid():
    sl = epigraph_slice(builtin("quadratic"), 0.0, 0.0, 6.0)
    g = np.linspace(-3.0, 3.0, 61)
    for v in g:
        for eta in np.linspace(0.0, 6.0, 31):
            inside = 0.5 * v * v <= eta
            # allow the polygon chord error near the parabola
            if abs(0.5 * v * v - eta) > 0.02:
                assert sl.body.contains(np.array([v, eta]), tol=1e-9) == inside


def test_hausdorff_slice_gap_examples():
    assert hausdorff_slice_gap(SQRT, 0.0, 1.0, 1.0, 20.0)[0] == 0.0
    gap, bound = hausdorff_slice_gap(SQRT, 0.0, 1.0, 1.1, 20.0)
    assert gap <= bound
    drift = linear_drift(drift_gain=1.0, cost_quad=0.0)
    gap, _ = hausdorff_slice_gap(drift, 0.0, 0.4, 0.7, 5.0)
    assert gap == pytest.approx(0.3, abs=1e-9)


def test_band_is_reported_constant():
    assert BAND == 1e-3
    lo, hi = banded_interval(-2.0, 2.0)
    assert (lo, hi) == pytest.approx((-1.998, 1.998))
