"""Value of the terminal-cost problem computed three independent ways.

* variational: minimize ``g(x(T)) + ∫ H*(t, x, x') dt`` over node states of a
  piecewise-linear path with slopes kept in the banded conjugate domain;
* control: minimize ``g(x(T)) + ∫ l(t, x, a) dt`` over piecewise-constant
  controls ``a`` with ``x' = f(t, x, a)`` where ``(f, l)`` is the epigraph
  parameterization;
* finite differences: a monotone local Lax-Friedrichs sweep of
  ``-V_t + H(t, x, -V_x) = 0`` backwards from ``V(T, .) = g``.

Audits compare the three values and check the Lipschitz-type regularity
bound, the optimal-control envelope and stability under perturbations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import minimize

from .hamiltonian import BAND, HamiltonianModel, banded_interval, conjugate, domain_interval, golden_max
from .representation import AuditRecord, parameterize_many

X_MAX = 1e6
EPS_OPT = 1e-8
EPS_FEAS = 1e-10
PENALTY = 1e4
FD_REL = 1e-7


class SolverError(RuntimeError):
    """No feasible candidate, or a trajectory left the blowup guard."""


class CFLError(ValueError):
    """Time step too large for the monotone explicit scheme."""


# ---------------------------------------------------------------------------
# terminal costs


@dataclass(frozen=True)
class TerminalCost:
    """Terminal cost ``g`` with a Lipschitz bound on balls.

    ``lipschitz(R)`` bounds the Lipschitz constant of ``g`` on ``[-R, R]``.
    """

    name: str
    fun: Callable
    lipschitz: Callable
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.fun(np.asarray(x, dtype=float))

    def slope(self, x, step: float = 1e-7):
        x = np.asarray(x, dtype=float)
        d = step * np.maximum(1.0, np.abs(x))
        return (self(x + d) - self(x - d)) / (2 * d)

    def minimum_on(self, R: float, n_grid: int = 4001) -> float:
        xs = np.linspace(-R, R, n_grid)
        knots = np.asarray(self.params.get("knots", []), dtype=float)
        xs = np.concatenate([xs, knots[np.abs(knots) <= R]])
        return float(np.min(self(xs)))


def _floats(v) -> list[float]:
    if isinstance(v, str):
        return [float(s) for s in v.replace(";", ",").split(",") if s.strip()]
    return [float(s) for s in np.atleast_1d(v)]


def terminal_cost(name: str, **params) -> TerminalCost:
    """Registry of terminal costs: ``abs``, ``quadratic``, ``constant``, ``piecewise``.

    ``abs``: ``scale * |x - center|``; ``quadratic``: ``scale * (x - center)^2``
    (default scale 1/2); ``constant``: ``value``; ``piecewise``: linear
    interpolation of ``values`` at increasing ``knots``, constant outside.
    """
    if name == "abs":
        s, c = float(params.get("scale", 1.0)), float(params.get("center", 0.0))
        return TerminalCost(name, lambda x: s * np.abs(x - c), lambda R: abs(s), {"scale": s, "center": c})
    if name == "quadratic":
        s, c = float(params.get("scale", 0.5)), float(params.get("center", 0.0))
        return TerminalCost(name, lambda x: s * (x - c) ** 2, lambda R: 2 * abs(s) * (R + abs(c)),
                            {"scale": s, "center": c})
    if name == "constant":
        v = float(params.get("value", 0.0))
        return TerminalCost(name, lambda x: v + 0.0 * x, lambda R: 0.0, {"value": v})
    if name == "piecewise":
        k = np.array(_floats(params["knots"]))
        v = np.array(_floats(params["values"]))
        if k.size < 2 or k.size != v.size or np.any(np.diff(k) <= 0):
            raise ValueError("piecewise cost needs >= 2 increasing knots and matching values")
        lip = float(np.max(np.abs(np.diff(v) / np.diff(k))))
        return TerminalCost(name, lambda x: np.interp(x, k, v), lambda R: lip,
                            {"knots": k.tolist(), "values": v.tolist()})
    raise KeyError(f"unknown terminal cost {name!r}; known: {', '.join(terminal_cost_names())}")


def terminal_cost_names() -> list[str]:
    return ["abs", "constant", "piecewise", "quadratic"]


# ---------------------------------------------------------------------------
# domain types


@dataclass
class Trajectory:
    """Node states on a uniform mesh, read as a piecewise-linear path.

    ``states`` has shape ``(N+1,)`` for ``n = 1`` and ``(N+1, n)`` otherwise.
    ``running`` optionally holds the accumulated running cost at the nodes.
    """

    times: np.ndarray
    states: np.ndarray
    running: np.ndarray | None = None

    @property
    def N(self) -> int:
        return len(self.times) - 1

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0]) if self.N > 0 else 0.0

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.states, axis=0) / self.step

    def feasibility_excess(self, model: HamiltonianModel) -> float:
        """``max_k |slope_k| - c(t_k)(1 + |x_k|)``; nonpositive for feasible paths."""
        if self.N == 0:
            return -math.inf
        s = np.abs(self.slopes).reshape(self.N, -1)
        s = np.linalg.norm(s, axis=1)
        x = np.linalg.norm(np.asarray(self.states).reshape(self.N + 1, -1)[:-1], axis=1)
        c = np.array([model.c(t) for t in self.times[:-1]])
        return float(np.max(s - c * (1 + x)))


@dataclass
class ControlSignal:
    """Piecewise-constant controls ``values[k]`` on ``[times[k], times[k+1])``."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float)) if len(self.times) > 1 \
            else np.zeros((0, np.shape(self.values)[-1] if np.ndim(self.values) else 2))
        if len(self.times) > 1 and self.values.shape[0] != len(self.times) - 1:
            raise ValueError("control needs one value per mesh interval")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("control values must be finite")

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1))) if self.values.size else 0.0

    @property
    def l1_norm(self) -> float:
        if not self.values.size:
            return 0.0
        return float(np.sum(np.diff(self.times) * np.linalg.norm(self.values, axis=1)))


@dataclass
class ValueField:
    """Grid values ``V(times[j], xs[i])`` with ``times`` increasing to ``T``."""

    times: np.ndarray
    xs: np.ndarray
    values: np.ndarray
    scheme: dict = field(default_factory=dict)

    def __post_init__(self):
        self._interp = RegularGridInterpolator((self.times, self.xs), self.values, bounds_error=True)

    def __call__(self, t, x):
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        out = self._interp(np.column_stack([t.ravel(), x.ravel()])).reshape(t.shape)
        return float(out) if out.ndim == 0 else out

    def row(self, t) -> np.ndarray:
        return np.array([self(t, x) for x in self.xs])


@dataclass(frozen=True)
class RegularityConstants:
    """Growth radius, value Lipschitz constant and control envelope for ``|x0| <= M``.

    ``omega``, ``lam`` and ``alpha`` are sampled on ``times``; entries may be
    ``inf`` when the exponential factors overflow.
    """

    M: float
    R: float
    D_R: float
    D: float
    C_M: float
    times: np.ndarray
    omega: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray

    def alpha_at(self, t):
        return np.interp(t, self.times, self.alpha)

    def lam_at(self, t):
        return np.interp(t, self.times, self.lam)

    @property
    def lam_max(self) -> float:
        return float(np.max(self.lam))

    def time_modulus(self, t, s):
        """``|alpha(t) - alpha(s)|`` with ``inf - inf`` read as ``inf`` unless ``t == s``."""
        t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        at, as_ = self.alpha_at(t), self.alpha_at(s)
        with np.errstate(invalid="ignore"):
            d = np.abs(at - as_)
        return np.where(t == s, 0.0, np.where(np.isnan(d), np.inf, d))

    def two_point_bound(self, t, x, s, y):
        dx = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        with np.errstate(invalid="ignore"):
            space = np.where(dx == 0, 0.0, self.C_M * dx)
        return self.time_modulus(t, s) + space


def _times_mul(a, b):
    """Product with ``0 * inf = 0``."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    with np.errstate(invalid="ignore"):
        return np.where((a == 0) | (b == 0), 0.0, a * b)


def _exp(z):
    with np.errstate(over="ignore"):
        return np.exp(z)


def _h00(model: HamiltonianModel, t) -> float:
    zero = 0.0 if model.n == 1 else np.zeros(model.n)
    return abs(float(np.asarray(model.H(t, zero, zero))))


def regularity_constants(model: HamiltonianModel, g: TerminalCost, M: float, T: float = 1.0,
                         n_quad: int = 1001) -> RegularityConstants:
    """Constants of the two-point value bound and of the optimal-control envelope."""
    ts = np.linspace(0.0, T, n_quad)
    c = np.array([model.c(t) for t in ts])
    int_c = float(np.trapezoid(c, ts))
    R = float(_times_mul(M + int_c, _exp(int_c)))
    h0 = np.array([_h00(model, t) for t in ts])
    kR = np.array([model.k(t, R) for t in ts])
    k2R = np.array([model.k(t, 2 * R) for t in ts])
    D_R = float(g.lipschitz(R))
    int_k2 = float(np.trapezoid(k2R, ts))
    D = float(_times_mul(D_R + int_k2, _exp(int_k2)))
    with np.errstate(over="ignore", invalid="ignore"):
        omega = 2 * h0 + _times_mul(10 * (model.n + 1) * kR + c, 1 + R)
        Om = cumulative_trapezoid(omega, ts, initial=0.0)
        C_M = float(_times_mul(D_R + Om[-1], _exp(Om[-1])))
        lam = _times_mul(2 * (1 + R) * (1 + D), c) + h0 + _times_mul(R, kR)
        Lam = cumulative_trapezoid(lam, ts, initial=0.0)
        alpha = _times_mul(1 + C_M, Om) + 3 * Lam
    return RegularityConstants(float(M), R, D_R, D, C_M, ts, omega, lam, alpha)


def value_lower_bound(model: HamiltonianModel, g: TerminalCost, M: float, T: float = 1.0,
                      t0: float = 0.0, n_quad: int = 1001) -> float:
    """``-D - R ∫ k_R - ∫ |H(t,0,0)|`` for starts with ``|x0| <= M``.

    Paths from such starts stay in the ball of radius ``R``; ``D`` is the
    negative part of ``min g`` on that ball.
    """
    consts = regularity_constants(model, g, M, T, n_quad)
    R = consts.R
    if not math.isfinite(R):
        return -math.inf
    ts = np.linspace(t0, T, n_quad)
    D = max(0.0, -g.minimum_on(R))
    int_k = float(np.trapezoid([model.k(t, R) for t in ts], ts))
    int_h = float(np.trapezoid([_h00(model, t) for t in ts], ts))
    return 0.0 - D - R * int_k - int_h


# ---------------------------------------------------------------------------
# conjugate along paths


def _conj_path(model: HamiltonianModel, t, x, v):
    """``H*(t_i, x_i, v_i)`` for matching arrays (n = 1)."""
    t, x, v = np.broadcast_arrays(*(np.asarray(z, dtype=float) for z in (t, x, v)))
    if model.closed_conjugate is not None:
        return np.broadcast_to(np.asarray(model.closed_conjugate(t, x, v), dtype=float), v.shape).copy()
    return np.array([conjugate(model, ti, xi, vi) for ti, xi, vi in zip(t.ravel(), x.ravel(), v.ravel())],
                    dtype=float).reshape(v.shape)


def _domain_path(model: HamiltonianModel, t, x):
    t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    if model.domain is not None:
        lo, hi = model.domain(t, x)
        return (np.broadcast_to(np.asarray(lo, dtype=float), x.shape).copy(),
                np.broadcast_to(np.asarray(hi, dtype=float), x.shape).copy())
    pairs = [domain_interval(model, ti, xi) for ti, xi in zip(t.ravel(), x.ravel())]
    return (np.array([p[0] for p in pairs]).reshape(x.shape), np.array([p[1] for p in pairs]).reshape(x.shape))


def _banded_path(model, t, x, band):
    lo, hi = _domain_path(model, t, x)
    return banded_interval(lo, hi, band)


def _argmin_path(model, t, x):
    t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    if model.conjugate_argmin is not None:
        return np.broadcast_to(np.asarray(model.conjugate_argmin(t, x), dtype=float), x.shape).copy()
    lo, hi = _domain_path(model, t, x)
    out = 0.5 * (lo + hi)
    for i in np.ndindex(x.shape):
        if hi[i] > lo[i]:
            out[i] = float(golden_max(lambda v: -_conj_path(model, t[i], x[i], v), lo[i], hi[i],
                                      tol=1e-12, check_concave=False)[1])
    return out


def _one_or_two_sided(fm, f0, fp, d):
    with np.errstate(invalid="ignore"):
        both = np.isfinite(fm) & np.isfinite(fp)
        fwd = np.isfinite(fp) & np.isfinite(f0)
        bwd = np.isfinite(fm) & np.isfinite(f0)
        r = np.where(both, (fp - fm) / (2 * d), np.where(fwd, (fp - f0) / d, np.where(bwd, (f0 - fm) / d, 0.0)))
    return r


def _conj_partials(model, t, x, v, width):
    """Values and finite-difference partials of ``H*`` in ``v`` and ``x``."""
    f0 = _conj_path(model, t, x, v)
    dv = FD_REL * np.maximum(1e-3, np.minimum(1.0, width))
    dx = FD_REL * np.maximum(1.0, np.abs(x))
    fv = _one_or_two_sided(_conj_path(model, t, x, v - dv), f0, _conj_path(model, t, x, v + dv), dv)
    fx = _one_or_two_sided(_conj_path(model, t, x - dx, v), f0, _conj_path(model, t, x + dx, v), dx)
    return f0, fv, fx


# ---------------------------------------------------------------------------
# costs and control integration


def cost_variational(model: HamiltonianModel, g: TerminalCost, traj: Trajectory, band: float = BAND) -> float:
    """Terminal cost plus trapezoidal integral of the conjugate along the slopes.

    Returns ``inf`` when a slope leaves the banded domain at either end of
    its interval.
    """
    x = np.asarray(traj.states, dtype=float)
    if traj.N == 0:
        return float(g(x[0] if x.ndim == 1 else x[0]))
    h = traj.step
    t = np.asarray(traj.times, dtype=float)
    s = traj.slopes
    if model.n != 1:
        c0 = np.array([conjugate(model, t[k], x[k], s[k]) for k in range(traj.N)], dtype=float)
        c1 = np.array([conjugate(model, t[k + 1], x[k + 1], s[k]) for k in range(traj.N)], dtype=float)
        total = h * 0.5 * float(np.sum(c0 + c1))
        return total + float(g(x[-1])) if math.isfinite(total) else math.inf
    lo0, hi0 = _banded_path(model, t[:-1], x[:-1], band)
    lo1, hi1 = _banded_path(model, t[1:], x[1:], band)
    lo, hi = np.maximum(lo0, lo1), np.minimum(hi0, hi1)
    tol = EPS_FEAS * (1.0 + np.abs(s))
    if np.any(s < lo - tol) or np.any(s > hi + tol):
        return math.inf
    sc = np.clip(s, lo, np.maximum(lo, hi))
    c0 = _conj_path(model, t[:-1], x[:-1], sc)
    c1 = _conj_path(model, t[1:], x[1:], sc)
    total = h * 0.5 * float(np.sum(c0 + c1))
    if not math.isfinite(total):
        return math.inf
    return total + float(g(x[-1]))


def _rollout(model: HamiltonianModel, times, x0, A, first=None, x_max: float = X_MAX):
    """RK4 for ``(x, u)' = e(t, x, a_k)`` over a batch of control sequences.

    ``A`` has shape ``(P, N, n+1)`` and ``x0`` is one state or one per row.
    When ``first`` is given, row 0 is the
    reference and row ``p`` coincides with it before step ``first[p]``, so
    only rows that differ are integrated.
    """
    P, N, m = A.shape
    n = m - 1
    h = float(times[1] - times[0])
    X = np.empty((P, N + 1, n))
    U = np.zeros((P, N + 1))
    X[:, 0] = np.asarray(x0, dtype=float).reshape(-1, n)

    def field(t, xx, a):
        e = parameterize_many(model, t, xx[:, 0] if n == 1 else xx, a)
        return e[:, :n], e[:, n]

    if model.fixed_epigraph:
        # e does not depend on (t, x): one evaluation per distinct anchor
        uniq, inv = np.unique(A.reshape(-1, m), axis=0, return_inverse=True)
        e = parameterize_many(model, float(times[0]), X[0, 0, 0] if n == 1 else X[0, 0], uniq)[inv.ravel()]
        e = e.reshape(P, N, m)
        X[:, 1:] = X[:, :1] + h * np.cumsum(e[:, :, :n], axis=1)
        U[:, 1:] = h * np.cumsum(e[:, :, n], axis=1)
        if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > x_max:
            raise SolverError(f"state left |x| <= {x_max:g}")
        return X, U

    for k in range(N):
        act = np.arange(P) if first is None else np.nonzero(first <= k)[0]
        x = X[act, k]
        a = A[act, k]
        tk = float(times[k])
        f1, l1 = field(tk, x, a)
        f2, l2 = field(tk + h / 2, x + h / 2 * f1, a)
        f3, l3 = field(tk + h / 2, x + h / 2 * f2, a)
        f4, l4 = field(tk + h, x + h * f3, a)
        X[act, k + 1] = x + h / 6 * (f1 + 2 * f2 + 2 * f3 + f4)
        U[act, k + 1] = U[act, k] + h / 6 * (l1 + 2 * l2 + 2 * l3 + l4)
        if first is not None and act.size < P:
            rest = np.setdiff1d(np.arange(P), act)
            X[rest, k + 1] = X[0, k + 1]
            U[rest, k + 1] = U[0, k + 1]
        if not np.all(np.isfinite(X[act, k + 1])) or np.max(np.abs(X[act, k + 1])) > x_max:
            raise SolverError(f"state left |x| <= {x_max:g} at step {k + 1}")
    return X, U


def integrate_control(model: HamiltonianModel, t0, x0, control: ControlSignal, x_max: float = X_MAX) -> Trajectory:
    """Fixed-step RK4 solve of ``x' = f(t, x, a(t))`` with the running cost accumulated."""
    times = np.asarray(control.times, dtype=float)
    if abs(times[0] - t0) > 1e-12:
        raise ValueError("control mesh must start at t0")
    if len(times) == 1:
        return Trajectory(times, np.atleast_1d(np.asarray(x0, dtype=float)).reshape(1, -1).squeeze(-1)
                          if model.n == 1 else np.asarray(x0, dtype=float)[None], np.zeros(1))
    X, U = _rollout(model, times, x0, control.values[None], x_max=x_max)
    states = X[0, :, 0] if model.n == 1 else X[0]
    return Trajectory(times, states, U[0])


def cost_control(model: HamiltonianModel, g: TerminalCost, traj: Trajectory, control: ControlSignal) -> float:
    """Terminal cost plus integrated ``l`` along a trajectory/control pair."""
    if len(traj.times) != len(control.times) or np.max(np.abs(np.asarray(traj.times) - control.times)) > 1e-12:
        raise ValueError("trajectory and control meshes differ")
    x0 = traj.states[0]
    ref = integrate_control(model, float(traj.times[0]), x0, control)
    scale = 1.0 + float(np.max(np.abs(ref.states)))
    if float(np.max(np.abs(np.asarray(ref.states) - traj.states))) > 1e-9 * scale:
        raise ValueError("trajectory is not the solution driven by this control")
    return float(g(ref.states[-1])) + float(ref.running[-1])


def lift_trajectory(model: HamiltonianModel, traj: Trajectory, band: float = BAND) -> ControlSignal:
    """Graph controls ``a_k = (s_k, H*(t_k, x_k, s_k))`` of a feasible path (n = 1)."""
    t, x, s = traj.times, np.asarray(traj.states, dtype=float), traj.slopes
    lo, hi = _banded_path(model, t[:-1], x[:-1], band)
    s = np.clip(s, lo, np.maximum(lo, hi))
    return ControlSignal(t, np.column_stack([s, _conj_path(model, t[:-1], x[:-1], s)]))


# ---------------------------------------------------------------------------
# variational transcription


def _mesh(t0, T, N):
    return np.linspace(float(t0), float(T), int(N) + 1)


def _repair(model, times, x0, s, anchor, band, iters=40):
    """Forward pass moving each slope into its admissible interval.

    A slope is clipped to the banded domain at its left node and, if it then
    violates the constraint at its right node, bisected towards ``anchor``
    (the conjugate's minimizer). Returns the slopes and whether all are
    admissible.
    """
    h = float(times[1] - times[0])
    s = np.array(s, dtype=float)
    x = float(x0)
    ok = True
    for k in range(len(s)):
        lo, hi = _banded_path(model, times[k], x, band)
        lo, hi = float(lo), float(hi)
        sk = min(max(s[k], lo), max(lo, hi))
        a = float(np.clip(_argmin_path(model, times[k], x) if anchor is None else anchor, lo, max(lo, hi)))

        def admissible(v):
            l1, h1 = _banded_path(model, times[k + 1], x + h * v, band)
            return float(l1) - EPS_FEAS * (1 + abs(v)) <= v <= float(h1) + EPS_FEAS * (1 + abs(v))

        if not admissible(sk):
            good, bad = a, sk
            if not admissible(good):
                ok = False
            else:
                for _ in range(iters):
                    mid = 0.5 * (good + bad)
                    good, bad = (mid, bad) if admissible(mid) else (good, mid)
                sk = good
        s[k] = sk
        x = x + h * sk
    return s, ok


def solve_variational(model: HamiltonianModel, g: TerminalCost, t0, x0, N: int = 64, *, T: float = 1.0,
                      starts: int = 16, seed: int = 0, band: float = BAND, tol: float = EPS_OPT,
                      maxiter: int = 400) -> tuple[Trajectory, float]:
    """Minimize the variational cost over node states (n = 1).

    Slopes are the unknowns; the banded domain at both ends of every
    interval enters as inequality constraints for SLSQP. Starts are the
    path following the conjugate's minimizer plus ``starts - 1`` paths at
    random constant positions inside the admissible interval.
    """
    if model.n != 1:
        raise NotImplementedError("the variational transcription is implemented for n = 1")
    if N < 8:
        raise ValueError("N must be at least 8")
    x0 = float(x0)
    if T - t0 <= 0:
        return Trajectory(np.array([float(t0)]), np.array([x0])), float(g(x0))
    times = _mesh(t0, T, N)
    h = float(times[1] - times[0])
    strict = np.tril(np.ones((N, N)), -1)
    incl = np.tril(np.ones((N, N)))

    def path(s):
        return x0 + h * np.concatenate([[0.0], np.cumsum(s)])

    def bands(x):
        lo0, hi0 = _banded_path(model, times[:-1], x[:-1], band)
        lo1, hi1 = _banded_path(model, times[1:], x[1:], band)
        return lo0, hi0, lo1, hi1

    def band_slopes(x):
        d = FD_REL * np.maximum(1.0, np.abs(x))
        lm, hm = _banded_path(model, times, x - d, band)
        lp, hp = _banded_path(model, times, x + d, band)
        return (lp - lm) / (2 * d), (hp - hm) / (2 * d)

    def objective(s):
        x = path(s)
        lo0, hi0, lo1, hi1 = bands(x)
        s0 = np.clip(s, lo0, np.maximum(lo0, hi0))
        s1 = np.clip(s, lo1, np.maximum(lo1, hi1))
        c0, cv0, cx0 = _conj_partials(model, times[:-1], x[:-1], s0, hi0 - lo0)
        c1, cv1, cx1 = _conj_partials(model, times[1:], x[1:], s1, hi1 - lo1)
        if not (np.all(np.isfinite(c0)) and np.all(np.isfinite(c1))):
            return 1e300, np.zeros(N)
        val = h * 0.5 * float(np.sum(c0 + c1)) + float(g(x[-1]))
        val += PENALTY * float(np.sum((s - s0) ** 2 + (s - s1) ** 2))
        inside0 = s0 == s
        inside1 = s1 == s
        # direct sensitivities to node states x_1..x_N
        gx = np.zeros(N + 1)
        gx[:-1] += h * 0.5 * cx0
        gx[1:] += h * 0.5 * cx1
        gx[-1] += float(g.slope(x[-1]))
        grad = h * 0.5 * (cv0 * inside0 + cv1 * inside1) + 2 * PENALTY * ((s - s0) + (s - s1))
        # x_m depends on s_j for m > j with weight h
        tail = np.cumsum(gx[1:][::-1])[::-1]
        grad += h * tail
        return val, grad

    def cons(s):
        lo0, hi0, lo1, hi1 = bands(path(s))
        return np.concatenate([s - lo0, hi0 - s, s - lo1, hi1 - s])

    def cons_jac(s):
        x = path(s)
        dl, dh = band_slopes(x)
        eye = np.eye(N)
        jl0 = eye - h * dl[:-1, None] * strict
        jh0 = -eye + h * dh[:-1, None] * strict
        jl1 = eye - h * dl[1:, None] * incl
        jh1 = -eye + h * dh[1:, None] * incl
        return np.vstack([jl0, jh0, jl1, jh1])

    rng = np.random.default_rng(seed)
    candidates = [_argmin_start(model, times, x0, band)]
    for _ in range(max(0, starts - 1)):
        theta = rng.uniform(0.0, 1.0)
        candidates.append(_fraction_start(model, times, x0, band, theta))
    best = None
    for s_start, ok in candidates:
        if not ok:
            continue
        res = minimize(objective, s_start, jac=True, method="SLSQP",
                       constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
                       options={"maxiter": maxiter, "ftol": tol})
        s_opt, _ = _repair(model, times, x0, res.x, None, band)
        traj = Trajectory(times, path(s_opt))
        val = cost_variational(model, g, traj, band)
        if math.isfinite(val) and (best is None or val < best[1]):
            best = (traj, val)
        start_traj = Trajectory(times, path(s_start))
        sval = cost_variational(model, g, start_traj, band)
        if math.isfinite(sval) and (best is None or sval < best[1]):
            best = (start_traj, sval)
    if best is None:
        raise SolverError("no feasible start for the variational transcription")
    return best


def _argmin_start(model, times, x0, band):
    h = float(times[1] - times[0])
    N = len(times) - 1
    s = np.empty(N)
    x = float(x0)
    ok = True
    for k in range(N):
        vk = float(_argmin_path(model, times[k], x))
        sk, okk = _repair(model, times[k:k + 2], x, [vk], vk, band)
        ok &= okk
        s[k] = sk[0]
        x += h * s[k]
    return s, ok


def _fraction_start(model, times, x0, band, theta):
    h = float(times[1] - times[0])
    N = len(times) - 1
    s = np.empty(N)
    x = float(x0)
    ok = True
    for k in range(N):
        lo, hi = _banded_path(model, times[k], x, band)
        target = float(lo + theta * (hi - lo))
        sk, okk = _repair(model, times[k:k + 2], x, [target], None, band)
        ok &= okk
        s[k] = sk[0]
        x += h * s[k]
    return s, ok


# ---------------------------------------------------------------------------
# control transcription


def _fd_directions(model, times, X, A):
    """Signs of one-sided steps pointing into the epigraph at the reference path.

    Heights step up; velocities step towards the conjugate's minimizer, so a
    graph control stays in the epigraph at its own node.
    """
    n = model.n
    sign = np.ones_like(A)
    if n == 1:
        vmin = _argmin_path(model, times[:-1], X[:-1, 0])
        sign[:, 0] = np.where(A[:, 0] > vmin, -1.0, 1.0)
    else:
        sign[:, :n] = np.where(A[:, :n] > 0, -1.0, 1.0)
    return sign


def _control_objective(model, g, times, x0, N, m, fd_step):
    def fun_grad(z):
        A = z.reshape(N, m)
        X, U = _rollout(model, times, x0, A[None])
        base = float(g(X[0, -1, 0] if m == 2 else X[0, -1])) + float(U[0, -1])
        sign = _fd_directions(model, times, X[0], A).ravel()
        step = fd_step * np.maximum(1.0, np.abs(z)) * sign
        P = z.size + 1
        batch = np.repeat(z[None], P, axis=0)
        batch[np.arange(1, P), np.arange(z.size)] += step
        first = np.concatenate([[-1], np.arange(z.size) // m])
        Xb, Ub = _rollout(model, times, x0, batch.reshape(P, N, m), first=first)
        if m == 2:
            vals = g(Xb[:, -1, 0]) + Ub[:, -1]
        else:
            vals = np.array([float(g(e)) for e in Xb[:, -1]]) + Ub[:, -1]
        grad = (vals[1:] - vals[0]) / step
        return base, grad

    return fun_grad


class _BudgetExhausted(Exception):
    pass


class _Budget:
    """Objective wrapper that stops after ``limit`` evaluations and keeps the best point.

    The line search of L-BFGS-B may exceed its own evaluation limit at
    kinks of the cost, which the graph of the conjugate produces.
    """

    def __init__(self, fun, limit):
        self.fun = fun
        self.limit = limit
        self.count = 0
        self.best_z = None
        self.best_val = math.inf

    def __call__(self, z):
        if self.limit is not None and self.count >= self.limit:
            raise _BudgetExhausted
        self.count += 1
        val, grad = self.fun(z)
        if val < self.best_val:
            self.best_val, self.best_z = val, np.array(z, dtype=float)
        return val, grad


def _normalize_controls(model, times, X, A):
    """Replace each ``a_k`` by ``e(t_k, x_k, a_k)``; the map is idempotent on its range."""
    out = A.copy()
    n = model.n
    for k in range(A.shape[0]):
        out[k] = parameterize_many(model, float(times[k]), X[k, 0] if n == 1 else X[k], A[k][None])[0]
    return out


def solve_control(model: HamiltonianModel, g: TerminalCost, t0, x0, N: int = 64, S: int = 16, *,
                  T: float = 1.0, seed: int = 0, warm: ControlSignal | None = None, maxiter: int = 60,
                  maxfun: int | None = None, fd_step: float = 1e-6, tol: float = EPS_OPT) -> tuple[Trajectory, ControlSignal, float]:
    """Minimize the control cost over piecewise-constant controls with L-BFGS-B.

    Starts: ``warm`` when given, the zero control, and ``S - 1 - (warm given)``
    random controls in a box scaled by the conjugate's domain bound.
    Gradients are one-sided finite differences of batched rollouts. The
    returned controls are normalized through the parameterization at their
    nodes and the reported value is recomputed with them.
    """
    n = model.n
    m = n + 1
    if N < 8:
        raise ValueError("N must be at least 8")
    x0a = np.asarray(x0, dtype=float)
    if T - t0 <= 0:
        times = np.array([float(t0)])
        traj = Trajectory(times, np.atleast_1d(x0a) if n == 1 else x0a[None], np.zeros(1))
        return traj, ControlSignal(times, np.zeros((0, m))), float(g(x0a))
    times = _mesh(t0, T, N)
    rng = np.random.default_rng(seed)
    starts = []
    if warm is not None:
        starts.append(np.asarray(warm.values, dtype=float).ravel())
    starts.append(np.zeros(N * m))
    box = model.c(t0) * (1.0 + float(np.linalg.norm(np.atleast_1d(x0a))))
    while len(starts) < max(1, S):
        starts.append(rng.uniform(-box, box, N * m))
    fun_grad = _control_objective(model, g, times, x0a, N, m, fd_step)
    best = None
    seen = []
    for z0 in starts:
        if any(np.array_equal(z0, z) for z in seen):
            continue
        seen.append(z0)
        budget = _Budget(fun_grad, maxfun)
        try:
            minimize(budget, z0, jac=True, method="L-BFGS-B",
                     options={"maxiter": maxiter, "ftol": tol, "gtol": 1e-7})
        except _BudgetExhausted:
            pass
        for z in (budget.best_z, z0):
            if z is None:
                continue
            A = z.reshape(N, m)
            X, _ = _rollout(model, times, x0a, A[None])
            A = _normalize_controls(model, times, X[0], A)
            control = ControlSignal(times, A)
            traj = integrate_control(model, t0, x0a, control)
            val = float(g(traj.states[-1])) + float(traj.running[-1])
            if best is None or val < best[2]:
                best = (traj, control, val)
    return best


# ---------------------------------------------------------------------------
# finite differences


def _hp(model, t, x, p):
    d = 1e-6 * np.maximum(1.0, np.abs(p))
    return (model.H(t, x, p + d) - model.H(t, x, p - d)) / (2 * d)


def solve_hj_fd(model: HamiltonianModel, g: TerminalCost, *, T: float = 1.0, x_lo: float = -2.0,
                x_hi: float = 2.0, hx: float = 1 / 64, t0: float = 0.0, dt: float | None = None,
                cfl: float = 0.9, pad: float = 1.0, store_every: int = 1) -> ValueField:
    """Backward local Lax-Friedrichs sweep for ``-V_t + H(t, x, -V_x) = 0`` (n = 1).

    The grid covers ``[x_lo - pad, x_hi + pad]`` with linearly extrapolated
    ghost values. The time step must satisfy ``dt <= hx / max c(t)(1+|x|)``;
    the dissipation uses the local maximum of ``|H_p|`` at the one-sided
    difference quotients.
    """
    if model.n != 1:
        raise NotImplementedError("the finite-difference solver is implemented for n = 1")
    lo, hi = x_lo - pad, x_hi + pad
    nx = int(round((hi - lo) / hx)) + 1
    xs = lo + hx * np.arange(nx)
    ts_probe = np.linspace(t0, T, 101)
    speed = max(model.c(t) for t in ts_probe) * (1.0 + float(np.max(np.abs(xs))))
    limit = hx / speed if speed > 0 else math.inf
    if dt is None:
        dt = cfl * limit if math.isfinite(limit) else (T - t0) / 16
    if dt > limit * (1 + 1e-12):
        raise CFLError(f"time step {dt:g} exceeds CFL bound {limit:g}")
    nt = max(1, int(math.ceil((T - t0) / dt - 1e-9)))
    dt = (T - t0) / nt
    bound = np.array([model.c(t0 + j * dt) for j in range(nt + 1)])
    V = np.asarray(g(xs), dtype=float).copy()
    rows = {nt: V.copy()}
    for j in range(nt, 0, -1):
        t = t0 + j * dt
        ext = np.concatenate([[2 * V[0] - V[1]], V, [2 * V[-1] - V[-2]]])
        pm = (V - ext[:-2]) / hx
        pp = (ext[2:] - V) / hx
        qa, qb = -pm, -pp
        alpha = np.maximum(np.abs(_hp(model, t, xs, qa)), np.abs(_hp(model, t, xs, qb)))
        alpha = np.minimum(alpha, bound[j] * (1 + np.abs(xs)))
        hbar = np.asarray(model.H(t, xs, -(pm + pp) / 2), dtype=float)
        V = V - dt * (hbar - 0.5 * alpha * (pp - pm))
        if (j - 1) % store_every == 0 or j == 1:
            rows[j - 1] = V.copy()
    keys = sorted(rows)
    times = t0 + dt * np.array(keys, dtype=float)
    times[-1] = T
    values = np.array([rows[k] for k in keys])
    scheme = {"scheme": "local Lax-Friedrichs", "dt": dt, "hx": hx, "nt": nt, "cfl_limit": limit,
              "x_range": [float(lo), float(hi)], "pad": pad}
    return ValueField(times, xs, values, scheme)


# ---------------------------------------------------------------------------
# audits


def relative_gap(a: float, b: float, floor: float = 0.01) -> float:
    return abs(a - b) / max(abs(a), floor)


def equality_audit(model: HamiltonianModel, g: TerminalCost, instances, *, T: float = 1.0, N: int = 32,
                   starts: int = 4, control_starts: int = 2, seed: int = 0, field: ValueField | None = None,
                   tol_rel: float = 0.02, tol_fd: float = 5e-2, control_maxiter: int = 30,
                   control_maxfun: int | None = None):
    """Values by the three solvers on ``(t0, x0)`` instances.

    The control solve is warm-started from the graph lift of the variational
    optimum and also run from the zero control. Returns the table rows and
    the audit records (relative variational/control gap, absolute
    variational/finite-difference gap).
    """
    rows = []
    for i, (t0, x0) in enumerate(instances):
        traj, v_var = solve_variational(model, g, t0, x0, N, T=T, starts=starts, seed=seed + i)
        warm = lift_trajectory(model, traj) if traj.N > 0 else None
        _, ctrl, v_ctrl = solve_control(model, g, t0, x0, N, control_starts, T=T, seed=seed + i, warm=warm,
                                        maxiter=control_maxiter, maxfun=control_maxfun)
        v_fd = float(field(t0, x0)) if field is not None else math.nan
        rows.append({"t0": float(t0), "x0": float(x0), "V_var": v_var, "V_ctrl": v_ctrl, "V_fd": v_fd,
                     "sup_a": ctrl.sup_norm, "gap_ctrl": relative_gap(v_var, v_ctrl),
                     "gap_fd": abs(v_var - v_fd) if field is not None else math.nan})
    worst_rel = max(r["gap_ctrl"] for r in rows)
    recs = [AuditRecord("equality_var_ctrl", tol_rel, worst_rel, worst_rel <= tol_rel, len(rows), seed)]
    if field is not None:
        worst_fd = max(r["gap_fd"] for r in rows)
        recs.append(AuditRecord("equality_var_fd", tol_fd, worst_fd, worst_fd <= tol_fd, len(rows), seed))
    return rows, recs


def control_bound_audit(rows, consts: RegularityConstants) -> AuditRecord:
    """Every reported ``sup |a|`` must stay below ``max_t lambda_M(t)``."""
    sups = np.array([r["sup_a"] for r in rows])
    viol = int(np.sum(sups > consts.lam_max))
    return AuditRecord("control_bound", consts.lam_max, float(np.max(sups)) if sups.size else 0.0, viol == 0,
                       len(rows), None, {"violations": viol})


def regularity_audit(model: HamiltonianModel, g: TerminalCost, M: float, field: ValueField, *,
                     T: float = 1.0, pairs: int = 1000, seed: int = 0, max_fraction: float = 0.01,
                     refine: Callable[[], ValueField] | None = None) -> AuditRecord:
    """Sampled two-point bound ``|V(t,x) - V(s,y)| <= |α(t) - α(s)| + C_M |x - y|``.

    Violations up to ``max_fraction`` are tolerated as solver error; when
    ``refine`` is given they are recomputed on the refined field and must
    disappear there.
    """
    consts = regularity_constants(model, g, M, T)
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, T, pairs)
    s = rng.uniform(0, T, pairs)
    x = rng.uniform(-M, M, pairs)
    y = rng.uniform(-M, M, pairs)
    lhs = np.abs(field(t, x) - field(s, y))
    rhs = consts.two_point_bound(t, x, s, y)
    bad = lhs > rhs
    frac = float(np.mean(bad))
    remaining = int(np.sum(bad))
    if remaining and refine is not None:
        fine = refine()
        remaining = int(np.sum(np.abs(fine(t[bad], x[bad]) - fine(s[bad], y[bad])) > rhs[bad]))
    ratio = lhs / np.where(rhs > 0, rhs, np.inf)
    return AuditRecord("regularity", max_fraction, frac, frac <= max_fraction and (remaining == 0 or refine is None),
                       pairs, seed, {"C_M": consts.C_M, "R": consts.R, "max_ratio": float(np.max(ratio)),
                                     "remaining_after_refine": remaining})


def value_stability_audit(base_field: ValueField, fields, *, tol: float, x_range=None,
                          noise: float = 1e-9) -> AuditRecord:
    """Sup-grid gaps ``|V_i - V|``; passes iff nonincreasing within noise and the last gap ``<= tol``."""
    gaps = []
    for f in fields:
        xs = base_field.xs
        if x_range is not None:
            xs = xs[(xs >= x_range[0]) & (xs <= x_range[1])]
        tt, xx = np.meshgrid(base_field.times, xs, indexing="ij")
        gaps.append(float(np.max(np.abs(f(tt, xx) - base_field(tt, xx)))))
    mono = all(b <= a + noise for a, b in zip(gaps, gaps[1:]))
    return AuditRecord("value_stability", tol, gaps[-1], mono and gaps[-1] <= tol, len(gaps), None,
                       {"gaps": gaps, "monotone": mono})


def shift_identity_error(base_field: ValueField, shifted_field: ValueField, delta: float, T: float = 1.0) -> float:
    """Max over the grid of ``|V_shift(t,x) - (V(t,x) - (T - t) delta)|``."""
    tt, xx = np.meshgrid(base_field.times, base_field.xs, indexing="ij")
    return float(np.max(np.abs(shifted_field(tt, xx) - (base_field(tt, xx) - (T - tt) * delta))))
