from __future__ import annotations

import math

import numpy as np
import pytest

from hjrep.hamiltonian import builtin, shifted
from hjrep.value_function import (
    CFLError, ControlSignal, Trajectory, control_bound_audit, cost_control, cost_variational, equality_audit,
    integrate_control, lift_trajectory, regularity_audit, regularity_constants, relative_gap,
    shift_identity_error, solve_control, solve_hj_fd, solve_variational, terminal_cost, value_lower_bound,
    value_stability_audit,
)

SQRT = builtin("sqrt_example")
QUAD = builtin("quadratic")
ZERO = builtin("zero")
HALF_SQ = terminal_cost("quadratic")
ABS = terminal_cost("abs")


def closed_quadratic(t, x, T=1.0):
    # V(t, x) = x^2 / (2 (1 + T - t)) for H = p^2/2 and g = x^2/2 (slopes stay below the Huber knee)
    return np.asarray(x) ** 2 / (2.0 * (1.0 + T - np.asarray(t)))


@pytest.fixture(scope="module")
def quad_field():
    return solve_hj_fd(QUAD, HALF_SQ, T=1.0, x_lo=-2.0, x_hi=2.0, hx=1 / 64)


def test_terminal_costs():
    assert ABS(-2.0) == 2.0
    assert HALF_SQ(2.0) == 2.0
    assert terminal_cost("constant", value=3.0)(5.0) == 3.0
    pw = terminal_cost("piecewise", knots="-1, 0, 1", values="1, 0, 2")
    assert pw(0.5) == pytest.approx(1.0)
    assert pw.lipschitz(1.0) == 2.0
    with pytest.raises(KeyError):
        terminal_cost("cubic")


def test_cost_variational_examples():
    times = np.linspace(0.0, 1.0, 33)
    const = Trajectory(times, np.full(33, 0.7))
    assert cost_variational(SQRT, ABS, const) == pytest.approx(0.7, abs=1e-12)
    line = Trajectory(times, 1.0 - 0.5 * times)
    assert cost_variational(QUAD, HALF_SQ, line) == pytest.approx(0.25, abs=1e-12)
    steep = Trajectory(times, 1.0 + 3.0 * times)
    assert cost_variational(SQRT, ABS, steep) == math.inf


def test_cost_control_examples():
    times = np.linspace(0.0, 1.0, 17)
    zero = ControlSignal(times, np.zeros((16, 2)))
    traj = integrate_control(SQRT, 0.0, 0.8, zero)
    assert np.allclose(traj.states, 0.8)
    assert cost_control(SQRT, ABS, traj, zero) == pytest.approx(0.8, abs=1e-12)
    k = -0.5
    ctrl = ControlSignal(times, np.tile([k, 0.5 * k * k], (16, 1)))
    traj = integrate_control(QUAD, 0.0, 1.0, ctrl)
    assert np.allclose(traj.states, 1.0 + k * times, atol=1e-12)
    assert cost_control(QUAD, HALF_SQ, traj, ctrl) == pytest.approx(0.25, abs=1e-12)
    traj = integrate_control(ZERO, 0.0, 0.3, ControlSignal(times, np.tile([1.0, -2.0], (16, 1))))
    assert np.allclose(traj.states, 0.3)
    assert np.all(np.diff(traj.running) >= 0)


def test_cost_control_rejects_mismatch():
    times = np.linspace(0.0, 1.0, 9)
    ctrl = ControlSignal(times, np.tile([-0.5, 0.125], (8, 1)))
    wrong = Trajectory(times, np.ones(9))
    with pytest.raises(ValueError):
        cost_control(QUAD, HALF_SQ, wrong, ctrl)
    with pytest.raises(ValueError):
        cost_control(QUAD, HALF_SQ, Trajectory(np.linspace(0, 1, 5), np.ones(5)), ctrl)


def test_control_cost_dominates_variational_on_induced_path():
    rng = np.random.default_rng(0)
    times = np.linspace(0.0, 1.0, 33)
    for _ in range(5):
        ctrl = ControlSignal(times, rng.normal(size=(32, 2)) * 2)
        traj = integrate_control(SQRT, 0.0, 1.2, ctrl)
        assert cost_control(SQRT, ABS, traj, ctrl) >= cost_variational(SQRT, ABS, traj, band=0.0) - 1e-3


def test_solve_variational_examples():
    traj, v = solve_variational(QUAD, HALF_SQ, 0.0, 1.0, 32, starts=4)
    assert v == pytest.approx(0.25, abs=1e-6)
    assert traj.feasibility_excess(QUAD) <= 1e-9
    _, v = solve_variational(QUAD, HALF_SQ, 1.0, 0.7, 32)
    assert v == HALF_SQ(0.7)
    _, v = solve_variational(SQRT, ABS, 0.0, 0.0, 16, starts=2)
    assert v == pytest.approx(0.0, abs=1e-9)


def test_solve_variational_closed_form_grid():
    for t0 in (0.0, 0.5):
        for x0 in (-1.5, 0.5):
            _, v = solve_variational(QUAD, HALF_SQ, t0, x0, 16, starts=2)
            assert v == pytest.approx(closed_quadratic(t0, x0), rel=1e-4)


def test_solve_control_examples():
    traj, ctrl, v = solve_control(QUAD, HALF_SQ, 0.0, 1.0, 16, S=2, maxfun=200)
    assert v == pytest.approx(0.25, rel=0.02)
    assert ctrl.values.shape == (16, 2)
    _, _, v = solve_control(QUAD, HALF_SQ, 1.0, 0.7, 16)
    assert v == HALF_SQ(0.7)


def test_warm_started_control_matches_variational():
    traj, v = solve_variational(QUAD, HALF_SQ, 0.0, 1.0, 16, starts=2)
    _, ctrl, vc = solve_control(QUAD, HALF_SQ, 0.0, 1.0, 16, S=1, warm=lift_trajectory(QUAD, traj), maxfun=20)
    assert relative_gap(v, vc) <= 1e-6


def test_fd_examples(quad_field):
    const = solve_hj_fd(ZERO, terminal_cost("constant", value=2.5), hx=1 / 16)
    assert np.allclose(const.values, 2.5)
    assert quad_field(0.0, 1.0) == pytest.approx(0.25, abs=1e-2)
    assert np.array_equal(quad_field.values[-1], HALF_SQ(quad_field.xs))
    sq = solve_hj_fd(SQRT, ABS, hx=1 / 32)
    assert np.all(sq.values <= np.abs(sq.xs)[None, :] + 1e-12)


def test_fd_converges_to_closed_form(quad_field):
    xs = np.linspace(-1.5, 1.5, 31)
    err = np.max(np.abs(quad_field(0.0, xs) - closed_quadratic(0.0, xs)))
    coarse = solve_hj_fd(QUAD, HALF_SQ, hx=1 / 16)
    err_coarse = np.max(np.abs(coarse(0.0, xs) - closed_quadratic(0.0, xs)))
    assert err < 1e-2
    assert err < err_coarse


def test_fd_cfl_violation():
    with pytest.raises(CFLError):
        solve_hj_fd(QUAD, HALF_SQ, hx=1 / 16, dt=1.0)


def test_equality_audit_small(quad_field):
    rows, recs = equality_audit(QUAD, HALF_SQ, [(0.0, 1.0), (0.5, -0.5)], N=16, starts=2, control_starts=1,
                                field=quad_field, control_maxfun=10)
    assert [r.name for r in recs] == ["equality_var_ctrl", "equality_var_fd"]
    assert all(r.passed for r in recs)
    assert set(rows[0]) >= {"t0", "x0", "V_var", "V_ctrl", "V_fd", "sup_a", "gap_ctrl", "gap_fd"}


def test_regularity_constants_quadratic():
    c = regularity_constants(QUAD, HALF_SQ, 1.0)
    assert c.R == pytest.approx((1 + 4.0) * math.exp(4.0))
    # the exponential factor overflows; alpha is still nondecreasing in the extended reals
    assert c.C_M == math.inf
    assert np.array_equal(np.maximum.accumulate(c.alpha), c.alpha)
    assert min(c.R, c.D_R, c.D, c.C_M, c.lam_max) >= 0
    xs = np.linspace(-1, 1, 41)
    gaps = np.abs(closed_quadratic(0, xs[:, None]) - closed_quadratic(0, xs[None, :]))
    assert np.all(gaps <= c.two_point_bound(0.0, xs[:, None], 0.0, xs[None, :]))
    assert float(c.two_point_bound(0.3, 0.2, 0.3, 0.2)) == 0.0


def test_regularity_constants_sqrt_finite():
    c = regularity_constants(SQRT, ABS, 1.0)
    assert c.R == pytest.approx(2 * math.e, rel=1e-6)
    assert math.isfinite(c.C_M) and c.C_M > 1e60
    assert np.all(np.diff(c.alpha) >= 0)
    assert c.lam_max == pytest.approx(88.3, rel=1e-2)


def test_regularity_audit_quadratic(quad_field):
    rec = regularity_audit(QUAD, HALF_SQ, 1.0, quad_field, pairs=200)
    assert rec.passed


def test_control_bound_audit_records():
    c = regularity_constants(QUAD, HALF_SQ, 1.0)
    rec = control_bound_audit([{"sup_a": 0.5}, {"sup_a": 0.7}], c)
    assert rec.passed and rec.observed == 0.7
    rec = control_bound_audit([{"sup_a": 2 * c.lam_max}], c)
    assert not rec.passed


def test_lower_bound():
    assert value_lower_bound(QUAD, HALF_SQ, 1.0) == 0.0
    shifted_lb = value_lower_bound(shifted(QUAD, 0.5), HALF_SQ, 1.0)
    assert shifted_lb == pytest.approx(-0.5)
    _, v = solve_variational(shifted(QUAD, 0.5), HALF_SQ, 0.0, 0.0, 16, starts=2)
    assert v >= shifted_lb - 1e-9


def test_shift_identity_and_stability(quad_field):
    fields = []
    for i in (1, 2, 4):
        f = solve_hj_fd(shifted(QUAD, 1.0 / i), HALF_SQ, hx=1 / 64)
        assert shift_identity_error(quad_field, f, 1.0 / i) <= 1e-9
        fields.append(f)
    rec = value_stability_audit(quad_field, fields, tol=0.25 + 1e-6)
    assert rec.passed
    assert rec.extra["gaps"][-1] == pytest.approx(0.25, abs=1e-9)
