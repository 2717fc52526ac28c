"""Epigraph tubes built from value fields and invariance of the inclusion they bound.

Along any solution of ``z' = (x', u') ∈ E(t, x)`` the running value ``u``
grows at least like the conjugate cost, so the margin ``u(t) + V(t, x(t))``
never decreases. The tube ``P(t) = {(x, u) : u >= -V(t, x)}`` is therefore
invariant: a start with ``u0 >= -V(t0, x0)`` stays inside. This module
simulates such solutions through the epigraph parameterization, measures the
margin along them, and probes tangency of directions of ``E`` to the graph
of the tube.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .hamiltonian import HamiltonianModel, conjugate
from .representation import AuditRecord, anchor_box_radius, parameterize_many
from .value_function import ControlSignal, SolverError, TerminalCost, ValueField, _rollout

EPS_INV = 1e-2
TAN_FACTOR = 5e-2
TAU_SEQ = tuple(2.0 ** -k for k in range(4, 13))


class TubeMembershipError(ValueError):
    """Probe point lies outside the tube."""


@dataclass
class Tube:
    """``P(t) = {(x, u) : u >= -V(t, x) - eps}`` for an interpolated value field.

    The lower boundary is piecewise linear in ``(t, x)``, hence absolutely
    continuous in time; this is recorded in ``metadata`` rather than tested.
    """

    field: ValueField
    eps: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.metadata.setdefault("boundary", "piecewise linear interpolant")
        self.metadata.setdefault("absolutely_continuous_in_t", True)

    @property
    def t_range(self):
        return float(self.field.times[0]), float(self.field.times[-1])

    @property
    def x_range(self):
        return float(self.field.xs[0]), float(self.field.xs[-1])

    @property
    def grid_step(self) -> float:
        return float(self.field.xs[1] - self.field.xs[0])

    def boundary(self, t, x):
        """Lowest admissible ``u`` at ``(t, x)``."""
        return -self.field(t, x)

    def margin(self, t, x, u):
        return np.asarray(u, dtype=float) + self.field(t, x)

    def contains(self, t, x, u) -> bool:
        return bool(np.all(self.margin(t, x, u) >= -self.eps))

    def inside_domain(self, t, x):
        t0, t1 = self.t_range
        x0, x1 = self.x_range
        t, x = np.asarray(t), np.asarray(x)
        return (t >= t0) & (t <= t1) & (x >= x0) & (x <= x1)

    def graph_distance(self, t, x, u) -> float:
        """Euclidean distance from ``(t, x, u)`` to the graph of ``P`` in ``(t, x, u)`` space."""
        gap = -float(self.margin(t, x, u)) - self.eps
        if gap <= 0:
            return 0.0
        (t0, t1), (x0, x1) = self.t_range, self.x_range
        w = np.array([t, x, u], dtype=float)

        def sq(y):
            s, xx = min(max(y[0], t0), t1), min(max(y[1], x0), x1)
            p = np.array([s, xx, -self.field(s, xx) - self.eps])
            return float(np.sum((p - w) ** 2)) + (y[0] - s) ** 2 + (y[1] - xx) ** 2

        best = gap * gap
        scale = max(gap, 1e-12)
        res = minimize(sq, np.array([t, x]), method="Nelder-Mead",
                       options={"xatol": 1e-6 * scale, "fatol": 1e-14 * scale * scale, "maxiter": 400,
                                "initial_simplex": np.array([[t, x], [t + scale, x], [t, x + scale]])})
        return math.sqrt(min(best, float(res.fun)))


def tube_from_field(field: ValueField, eps: float = 0.0) -> Tube:
    return Tube(field, eps)


@dataclass
class InclusionPath:
    """Node values of a simulated solution ``z = (x, u)``."""

    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    control: ControlSignal


def simulate_inclusion(model: HamiltonianModel, t0, z0, control: ControlSignal) -> InclusionPath:
    """RK4 path of ``(x', u') = (f, l)(t, x, a(t))`` from ``z0 = (x0, u0)`` (n = 1)."""
    x0, u0 = float(z0[0]), float(z0[1])
    times = np.asarray(control.times, dtype=float)
    if abs(times[0] - t0) > 1e-12:
        raise ValueError("control mesh must start at t0")
    if len(times) == 1:
        return InclusionPath(times, np.array([x0]), np.array([u0]), control)
    X, U = _rollout(model, times, x0, control.values[None])
    return InclusionPath(times, X[0, :, 0], u0 + U[0], control)


def inclusion_defect(model: HamiltonianModel, path: InclusionPath) -> float:
    """``max_k H*(t_k, x_k, f_k) - l_k`` at the nodes; nonpositive when ``z' ∈ E``."""
    worst = -math.inf
    for k in range(len(path.times) - 1):
        t, x = float(path.times[k]), float(path.x[k])
        f, l = parameterize_many(model, t, x, path.control.values[k][None])[0]
        worst = max(worst, float(conjugate(model, t, x, f)) - float(l))
    return worst


def margin_profile(tube: Tube, times, x, u):
    """Margins ``u + V`` at the nodes inside the tube's domain, and the largest drop."""
    keep = tube.inside_domain(times, x)
    m = np.asarray(tube.margin(np.asarray(times)[keep], np.asarray(x)[keep], np.asarray(u)[keep]), dtype=float)
    if m.size == 0:
        return m, 0.0, bool(np.all(keep))
    drop = float(np.max(np.maximum.accumulate(m) - m))
    return m, drop, bool(np.all(keep))


@dataclass
class ProbeResult:
    direction: np.ndarray
    ratios: np.ndarray
    min_ratio: float
    passed: bool


def tangency_threshold(tube: Tube) -> float:
    return TAN_FACTOR * tube.grid_step


def tangency_probe(model: HamiltonianModel, tube: Tube, t, z, directions, tau_seq=TAU_SEQ,
                   threshold: float | None = None) -> list[ProbeResult]:
    """Ratios ``d((t, z) + τ(1, e), gph P) / τ`` along ``τ_seq`` for each direction ``e``.

    A direction passes when the smallest ratio is below ``threshold``
    (default ``5e-2`` times the tube's space step).
    """
    x, u = float(z[0]), float(z[1])
    if not tube.contains(t, x, u):
        raise TubeMembershipError("probe point is outside the tube")
    thr = tangency_threshold(tube) if threshold is None else threshold
    out = []
    for e in np.atleast_2d(np.asarray(directions, dtype=float)):
        ratios = []
        for tau in tau_seq:
            s, y, w = t + tau, x + tau * e[0], u + tau * e[1]
            if not bool(tube.inside_domain(s, y)):
                continue
            ratios.append(tube.graph_distance(s, y, w) / tau)
        r = np.array(ratios)
        mr = float(np.min(r)) if r.size else math.inf
        out.append(ProbeResult(e, r, mr, mr <= thr))
    return out


def graph_directions(model: HamiltonianModel, t, x, v, lift: float = 0.0) -> np.ndarray:
    """Directions ``(v, H*(t, x, v) + lift)``; ``lift < 0`` gives points below the epigraph."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    h = np.asarray(conjugate(model, t, x, v), dtype=float)
    keep = np.isfinite(h)
    return np.column_stack([v[keep], h[keep] + lift])


def margin_rates(model: HamiltonianModel, tube: Tube, t, x, v, step: float | None = None) -> np.ndarray:
    """Forward-difference rate of ``u + V`` along the graph directions ``(v, H*(t, x, v))``."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    h = tube.grid_step if step is None else float(step)
    base = float(tube.field(t, x))
    moved = np.asarray(tube.field(np.full(v.shape, t + h), x + h * v), dtype=float)
    return np.asarray(conjugate(model, t, x, v), dtype=float) + (moved - base) / h


def tight_direction(model: HamiltonianModel, tube: Tube, t, x, v_grid) -> np.ndarray:
    """Graph direction with the smallest margin rate; the one a boundary solution follows."""
    v_grid = np.atleast_1d(np.asarray(v_grid, dtype=float))
    rates = margin_rates(model, tube, t, x, v_grid)
    rates = np.where(np.isfinite(rates), rates, np.inf)
    return graph_directions(model, t, x, [v_grid[int(np.argmin(rates))]])[0]


def invariance_audit(model: HamiltonianModel, g: TerminalCost, tube: Tube, K: int = 100, seed: int = 0, *,
                     T: float | None = None, N: int = 32, M: float = 1.0, box: float | None = None,
                     start_times=(0.0, 0.25, 0.5), eps_inv: float = EPS_INV) -> dict:
    """Margins ``u(t) + V(t, x(t))`` along ``K`` random inclusion trajectories.

    Starts: ``t0`` from ``start_times``, ``x0`` uniform in ``[-M, M]``,
    ``u0 = -V(t0, x0)`` for half of them and ``u0 = -V(t0, x0) + s`` with
    ``s ~ U(0, 1)`` for the rest. Controls are piecewise constant, uniform in
    a box of radius ``box`` (default the representation audit box). Passes
    iff every margin stays above ``-eps_inv`` and no margin drops by more
    than ``eps_inv``.
    """
    T = tube.t_range[1] if T is None else T
    rng = np.random.default_rng(seed)
    box = anchor_box_radius(model, [0.0, T], M) if box is None else float(box)
    groups = np.array(start_times, dtype=float)[rng.integers(len(start_times), size=K)]
    x0 = rng.uniform(-M, M, K)
    lift = np.where(rng.random(K) < 0.5, 0.0, rng.uniform(0.0, 1.0, K))
    scales = box * 10.0 ** rng.uniform(-3, 0, K)
    raw = rng.uniform(-1.0, 1.0, (K, N, 2)) * scales[:, None, None]
    u0 = -np.asarray(tube.field(groups, x0), dtype=float) + lift
    min_margin = math.inf
    worst_drop = 0.0
    failures = []
    left = 0
    for t0 in sorted(set(groups.tolist())):
        idx = np.nonzero(groups == t0)[0]
        times = np.linspace(t0, T, N + 1)
        try:
            X, U = _rollout(model, times, x0[idx][:, None], raw[idx])
        except SolverError as exc:
            failures.append({"t0": t0, "error": str(exc)})
            continue
        for j, i in enumerate(idx):
            m, drop, inside = margin_profile(tube, times, X[j, :, 0], u0[i] + U[j])
            left += not inside
            if m.size == 0:
                continue
            mm = float(np.min(m))
            min_margin = min(min_margin, mm)
            worst_drop = max(worst_drop, drop)
            if mm < -eps_inv or drop > eps_inv:
                failures.append({"index": int(i), "t0": float(t0), "x0": float(x0[i]), "u0": float(u0[i]),
                                 "min_margin": mm, "drop": drop})
    return {"trajectories": int(K), "min_margin": float(min_margin), "max_drop": float(worst_drop),
            "failures": failures, "left_domain": int(left), "seed": int(seed), "box": box,
            "eps_inv": eps_inv, "pass": not failures and min_margin >= -eps_inv}


def invariance_records(report: dict) -> list[AuditRecord]:
    eps = report["eps_inv"]
    return [AuditRecord("invariance_min_margin", -eps, report["min_margin"], report["min_margin"] >= -eps,
                        report["trajectories"], report["seed"]),
            AuditRecord("invariance_monotone", eps, report["max_drop"], report["max_drop"] <= eps,
                        report["trajectories"], report["seed"])]
