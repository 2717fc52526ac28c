"""Hamiltonian models, numerical convex conjugation and epigraph slices.

A model bundles ``H(t, x, p)`` (convex in ``p``), the growth coefficient
``c(t)`` bounding the p-Lipschitz constant by ``c(t)(1+|x|)``, and the
local x-Lipschitz function ``k(t, R)``. Oracle models also ship a closed
form conjugate and the conjugate's effective domain.

For ``n = 1`` every evaluator is vectorized over broadcast ``x`` and ``v``
arrays. Higher dimensions are supported through slower per-point code.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .convex_core import ConvexBody, Polygon, PointCloudBody, _segment_circle_hits, distance_to

P_MAX = 1e12
D_DIV = 1e8
P_TOL = 1e-10
BAND = 1e-3
INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class ModelError(ValueError):
    """The model violates a structural hypothesis (e.g. convexity in p)."""


class CapTooLowError(ValueError):
    def __init__(self, msg: str = "cap too low"):
        super().__init__(msg)


@dataclass(frozen=True)
class HamiltonianModel:
    """Immutable Hamiltonian description.

    Parameters
    ----------
    name : str
        Registry name, used in reports.
    n : int
        State dimension.
    hamiltonian : callable
        ``(t, x, p) -> H``; vectorized when ``n == 1``.
    growth : callable
        ``t -> c(t)``.
    lipschitz : callable
        ``(t, R) -> k_R(t)``.
    closed_conjugate : callable, optional
        ``(t, x, v) -> H*`` with ``inf`` off the domain.
    domain : callable, optional
        ``(t, x) -> (lo, hi)`` closure of the conjugate's domain (n = 1).
    conjugate_argmin : callable, optional
        ``(t, x) -> argmin_v H*(t,x,v)``.
    fixed_epigraph : bool
        True when the epigraph of ``H*(t,x,.)`` is the same set for every
        ``(t, x)``; solvers may then evaluate the parameterization once per
        anchor.
    """

    name: str
    n: int
    hamiltonian: Callable
    growth: Callable
    lipschitz: Callable
    closed_conjugate: Callable | None = None
    domain: Callable | None = None
    conjugate_argmin: Callable | None = None
    continuous_in_t: bool = True
    fixed_epigraph: bool = False
    params: dict = field(default_factory=dict)

    def H(self, t, x, p):
        return self.hamiltonian(t, x, p)

    def c(self, t) -> float:
        return float(self.growth(t))

    def k(self, t, radius) -> float:
        return float(self.lipschitz(t, radius))

    def describe(self) -> dict:
        return {"name": self.name, "n": self.n, **{k: self.params[k] for k in sorted(self.params)}}


# ---------------------------------------------------------------------------
# scalar search helpers


def golden_max(fun, lo, hi, tol=P_TOL, check_concave=True):
    """Vectorized golden-section maximization of concave ``fun`` on [lo, hi].

    Returns the best value seen, its argument, and raises ``ModelError`` when
    the evaluated samples contradict concavity.
    """
    a = np.array(lo, dtype=float)
    b = np.array(hi, dtype=float)
    width = float(np.max(b - a)) if a.size else 0.0
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    steps = 0
    if width > 0:
        steps = int(math.ceil(math.log(max(width, 1e-300) / (tol * float(np.min(scale)))) / -math.log(INVPHI))) + 1
        steps = max(steps, 1)
    x1 = b - INVPHI * (b - a)
    x2 = a + INVPHI * (b - a)
    f1, f2 = fun(x1), fun(x2)
    fa, fb = fun(a), fun(b)
    best = np.maximum(np.maximum(fa, fb), np.maximum(f1, f2))
    arg = np.where(fa >= fb, a, b)
    arg = np.where(f1 > np.maximum(fa, fb), x1, arg)
    arg = np.where(f2 > np.maximum(np.maximum(fa, fb), f1), x2, arg)
    for _ in range(steps):
        if check_concave:
            _check_concave(a, x1, b, fa, f1, fb)
        right = f1 < f2
        a = np.where(right, x1, a)
        fa = np.where(right, f1, fa)
        b = np.where(right, b, x2)
        fb = np.where(right, fb, f2)
        nx1 = np.where(right, x2, b - INVPHI * (b - a))
        nx2 = np.where(right, a + INVPHI * (b - a), x1)
        nf1 = np.where(right, f2, np.nan)
        nf2 = np.where(right, np.nan, f1)
        need1 = ~right
        need2 = right
        if np.any(need1):
            nf1 = np.where(need1, fun(nx1), nf1)
        if np.any(need2):
            nf2 = np.where(need2, fun(nx2), nf2)
        x1, x2, f1, f2 = nx1, nx2, nf1, nf2
        better1 = f1 > best
        best = np.where(better1, f1, best)
        arg = np.where(better1, x1, arg)
        better2 = f2 > best
        best = np.where(better2, f2, best)
        arg = np.where(better2, x2, arg)
    return best, arg


def _check_concave(p0, p1, p2, f0, f1, f2):
    with np.errstate(invalid="ignore"):
        span = p2 - p0
        w = np.where(span > 0, (p1 - p0) / np.where(span > 0, span, 1.0), 0.5)
        chord = (1 - w) * f0 + w * f2
        slack = 1e-9 * (1.0 + np.abs(f0) + np.abs(f1) + np.abs(f2))
        bad = np.isfinite(chord) & np.isfinite(f1) & (f1 < chord - slack)
    if np.any(bad):
        raise ModelError("non-concave conjugate objective: H is not convex in p")


def _bisect(fun, inside, outside, iters=80):
    """Shrink [inside, outside] towards the boundary of ``fun(v) == True``."""
    a = np.array(inside, dtype=float)
    b = np.array(outside, dtype=float)
    for _ in range(iters):
        m = 0.5 * (a + b)
        ok = fun(m)
        a = np.where(ok, m, a)
        b = np.where(ok, b, m)
    return a, b


# ---------------------------------------------------------------------------
# conjugation


def _conjugate_numeric_1d(model: HamiltonianModel, t, x, v):
    x, v = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(v, dtype=float))
    shape = x.shape
    x = x.ravel().copy()
    v = v.ravel().copy()
    out = np.full(x.shape, np.inf)
    bound = model.c(t) * (1.0 + np.abs(x))
    live = np.abs(v) <= bound * (1 + 1e-12)
    if not np.any(live):
        return out.reshape(shape)
    xl, vl = x[live], v[live]

    def phi(p, xs=xl, vs=vl):
        return vs * p - model.H(t, xs, p)

    f0 = phi(np.zeros_like(vl))
    fp, fm = phi(np.ones_like(vl)), phi(-np.ones_like(vl))
    if np.any((fp > f0 + 1e-12 * (1 + abs(f0))) & (fm > f0 + 1e-12 * (1 + abs(f0)))):
        raise ModelError("non-concave conjugate objective: H is not convex in p")
    sgn = np.where(fp > f0, 1.0, np.where(fm > f0, -1.0, 0.0))
    lo = np.where(sgn == 0, -1.0, 0.0)
    hi = np.where(sgn == 0, 1.0, 2.0)
    # bracket expansion along the ascent direction: points 0, s, 2s
    s = np.ones_like(vl)
    f_prev = f0.copy()
    f_s = np.where(sgn > 0, fp, fm)
    prev = np.zeros_like(vl)
    moving = sgn != 0
    diverged = np.zeros_like(vl, dtype=bool)
    while np.any(moving):
        nxt = 2.0 * s
        f_n = phi(sgn * nxt)
        _check_concave(prev, s, nxt, np.where(moving, f_prev, 0), np.where(moving, f_s, 0), np.where(moving, f_n, 0))
        stop = moving & (f_n <= f_s)
        lo = np.where(stop, prev, lo)
        hi = np.where(stop, nxt, hi)
        grow = moving & ~stop
        blow = grow & ((nxt >= P_MAX) | (f_n - f0 > D_DIV))
        diverged |= blow
        moving = grow & ~blow
        prev = np.where(moving, s, prev)
        f_prev = np.where(moving, f_s, f_prev)
        s = np.where(moving, nxt, s)
        f_s = np.where(moving, f_n, f_s)
    # orient the bracket in p
    a = np.where(sgn < 0, -hi, lo)
    b = np.where(sgn < 0, -lo, hi)
    ok = ~diverged
    vals = np.full(vl.shape, np.inf)
    if np.any(ok):
        xs, vs = xl[ok], vl[ok]
        best, _ = golden_max(lambda p: vs * p - model.H(t, xs, p), a[ok], b[ok])
        vals[ok] = best
    out[live] = vals
    return out.reshape(shape)


def _conjugate_numeric_nd(model: HamiltonianModel, t, x, v, sweeps=200):
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v)) > model.c(t) * (1 + np.linalg.norm(x)) * (1 + 1e-12):
        return np.inf
    n = model.n
    p = np.zeros(n)
    val = -float(model.H(t, x, p))
    for _ in range(sweeps):
        old = val
        for i in range(n):
            def h1(t_, x_, q, i=i, base=p.copy()):
                q = np.asarray(q, dtype=float)
                out = np.empty(q.shape)
                for j, qj in enumerate(q.ravel()):
                    pp = base.copy()
                    pp[i] = qj
                    out.flat[j] = float(model.H(t, x, pp)) - v @ pp + v[i] * qj
                return out
            sub = HamiltonianModel("coord", 1, h1, model.growth, model.lipschitz)
            # the 1-D routine returns sup_q {v_i q - H(...)} + the fixed part
            r = _coordinate_argmax(sub, t, v[i])
            if r is None:
                return np.inf
            p[i] = r
            val = float(v @ p - model.H(t, x, p))
        if abs(val - old) <= 1e-12 * (1 + abs(val)):
            break
    return val


def _coordinate_argmax(sub: HamiltonianModel, t, vi):
    def phi(q):
        return vi * q - sub.H(t, 0.0, q)

    f0 = float(phi(np.array(0.0)))
    s, prev, sgn = 1.0, 0.0, 0.0
    fp, fm = float(phi(np.array(1.0))), float(phi(np.array(-1.0)))
    if fp > f0:
        sgn = 1.0
    elif fm > f0:
        sgn = -1.0
    if sgn == 0:
        lo, hi = -1.0, 1.0
    else:
        fs = fp if sgn > 0 else fm
        while True:
            fn = float(phi(np.array(sgn * 2 * s)))
            if fn <= fs:
                lo, hi = sorted((sgn * prev, sgn * 2 * s))
                break
            if 2 * s >= P_MAX or fn - f0 > D_DIV:
                return None
            prev, s, fs = s, 2 * s, fn
    _, arg = golden_max(phi, np.array(lo), np.array(hi))
    return float(arg)


def conjugate_numeric(model: HamiltonianModel, t, x, v):
    """Conjugate by concave maximization over p on an expanding bracket."""
    if model.n == 1:
        res = _conjugate_numeric_1d(model, t, x, v)
        return float(res) if np.ndim(res) == 0 else res
    return _conjugate_numeric_nd(model, t, x, v)


def conjugate(model: HamiltonianModel, t, x, v, method: str = "auto"):
    """Legendre-Fenchel conjugate ``sup_p <v,p> - H(t,x,p)``; ``inf`` off the domain.

    ``method`` is ``"auto"`` (closed form when the model has one),
    ``"closed"`` or ``"numeric"``.
    """
    if method not in ("auto", "closed", "numeric"):
        raise ValueError(f"unknown method {method!r}")
    if method == "numeric" or (method == "auto" and model.closed_conjugate is None):
        return conjugate_numeric(model, t, x, v)
    if model.closed_conjugate is None:
        raise ValueError(f"model {model.name} has no closed-form conjugate")
    res = model.closed_conjugate(t, x, v)
    return float(res) if np.ndim(res) == 0 else res


def conjugate_domain_bound(model: HamiltonianModel, t, x) -> float:
    """Radius ``c(t)(1+|x|)`` of a ball containing the conjugate's domain."""
    return model.c(t) * (1.0 + float(np.linalg.norm(np.atleast_1d(x))))


def domain_interval(model: HamiltonianModel, t, x):
    """Closure ``[lo, hi]`` of the conjugate's domain for ``n == 1``.

    Uses the model's closed form when available, otherwise bisects on the
    finiteness of the numerical conjugate inside the growth window.
    """
    if model.n != 1:
        raise ValueError("domain_interval is for one-dimensional states")
    if model.domain is not None:
        lo, hi = model.domain(t, x)
        return float(lo), float(hi)
    x = float(x)
    r = conjugate_domain_bound(model, t, x)
    d = 1e-6
    v0 = float((model.H(t, x, d) - model.H(t, x, -d)) / (2 * d))
    v0 = min(max(v0, -r), r)

    def finite(v):
        return np.isfinite(conjugate_numeric(model, t, x, v))

    if not finite(v0):
        raise ModelError("could not locate a point of the conjugate domain")
    lo, _ = _bisect(finite, v0, -r * (1 + 1e-9), iters=60) if not finite(-r) else (-r, None)
    hi, _ = _bisect(finite, v0, r * (1 + 1e-9), iters=60) if not finite(r) else (r, None)
    return float(lo), float(hi)


def domain_arrays(model: HamiltonianModel, t, x):
    """Vectorized ``domain_interval`` over an array of states (n = 1)."""
    x = np.asarray(x, dtype=float)
    if model.domain is not None:
        lo, hi = model.domain(t, x)
        return np.broadcast_to(np.asarray(lo, dtype=float), x.shape).copy(), \
            np.broadcast_to(np.asarray(hi, dtype=float), x.shape).copy()
    pairs = [domain_interval(model, t, xi) for xi in x.ravel()]
    lo = np.array([p[0] for p in pairs]).reshape(x.shape)
    hi = np.array([p[1] for p in pairs]).reshape(x.shape)
    return lo, hi


def banded_interval(lo, hi, band: float = BAND):
    """Shrink ``[lo, hi]`` by ``band`` times its half-width at each end."""
    half = 0.5 * (np.asarray(hi) - np.asarray(lo))
    return lo + band * half, hi - band * half


# ---------------------------------------------------------------------------
# epigraph slices


def _argmin_conj(h, lo, hi):
    if hi - lo <= 0:
        return lo, float(h(np.array(lo)))
    neg, arg = golden_max(lambda v: -h(v), np.array(lo), np.array(hi), tol=1e-12, check_concave=False)
    return float(arg), float(-neg)


def default_cap(model: HamiltonianModel, t, x, band: float = BAND, n_grid: int = 2001) -> float:
    """``2 * max(conjugate on the banded domain grid) + 10``."""
    if model.n == 1:
        lo, hi = domain_interval(model, t, x)
        blo, bhi = banded_interval(lo, hi, band)
        vs = np.linspace(blo, bhi, n_grid) if bhi > blo else np.array([lo])
        vals = np.asarray(conjugate(model, t, x, vs))
    else:
        r = conjugate_domain_bound(model, t, x) * (1 - band)
        g = np.linspace(-r, r, 41)
        mesh = np.stack(np.meshgrid(*([g] * model.n), indexing="ij"), -1).reshape(-1, model.n)
        vals = np.array([conjugate(model, t, x, vv) for vv in mesh])
    fin = vals[np.isfinite(vals)]
    if fin.size == 0:
        raise ModelError("empty conjugate domain on the sampling grid")
    return 2.0 * float(np.max(fin)) + 10.0


@dataclass(frozen=True)
class EpigraphSlice(ConvexBody):
    """``{(v, eta): H*(t,x,v) <= eta <= cap}`` realized as a convex body.

    For ``n == 1`` the body is a polygon with graph vertices sampled by
    arclength-style refinement; :meth:`clamp` works on the exact epigraph.
    """

    model: HamiltonianModel
    t: float
    x: object
    cap: float
    window: float
    body: ConvexBody
    band: float = BAND

    @property
    def dim(self) -> int:
        return self.model.n + 1

    @property
    def tolerance(self) -> float:
        return self.body.tolerance

    def support_many(self, dirs):
        return self.body.support_many(dirs)

    def nearest(self, z):
        return self.body.nearest(z)

    def diameter(self):
        return self.body.diameter()

    def translate(self, shift):
        return self.body.translate(shift)

    def clamp(self, anchor):
        if self.model.n == 1:
            return epigraph_ball_intersection(self.model, self.t, self.x, anchor, cap=self.cap)[0]
        from .convex_core import clamp_intersection

        return clamp_intersection(self.body, anchor)


def _graph_polygon_1d(model, t, x, cap, n_poly=720):
    lo, hi = domain_interval(model, t, x)

    def h(v):
        return np.asarray(conjugate(model, t, x, v), dtype=float)

    vmin, hmin = _argmin_conj(h, lo, hi)
    if not np.isfinite(hmin) or cap < hmin + 1e-9 * (1 + abs(hmin)):
        raise CapTooLowError()
    if hi - lo <= 0:
        return Polygon(np.array([[lo, hmin], [lo, cap]]))

    def below(v):
        return h(v) <= cap

    vl = lo if below(np.array(lo)) else float(_bisect(below, vmin, lo)[0])
    vr = hi if below(np.array(hi)) else float(_bisect(below, vmin, hi)[0])
    vs = np.linspace(vl, vr, n_poly // 2)
    levels = np.linspace(hmin, cap, n_poly // 4 + 1)[1:]
    left_in = np.full(levels.shape, vmin)
    left, _ = _bisect(lambda v: h(v) <= levels, left_in, np.full(levels.shape, vl), iters=60)
    right, _ = _bisect(lambda v: h(v) <= levels, left_in, np.full(levels.shape, vr), iters=60)
    vv = np.concatenate([vs, left, right, [vmin]])
    hv = h(vv)
    pts = np.column_stack([vv, hv])
    pts = pts[np.isfinite(hv) & (hv <= cap)]
    pts = np.vstack([pts, [[vl, cap], [vr, cap]]])
    return Polygon(pts)


def epigraph_slice(model: HamiltonianModel, t, x, eta_cap: float | None = None, band: float = BAND) -> EpigraphSlice:
    """Truncated epigraph of ``v -> H*(t, x, v)`` as a compact convex body."""
    cap = default_cap(model, t, x, band) if eta_cap is None else float(eta_cap)
    window = conjugate_domain_bound(model, t, x)
    if model.n == 1:
        body = _graph_polygon_1d(model, t, float(x), cap)
    else:
        r = window
        g = np.linspace(-r, r, 41)
        mesh = np.stack(np.meshgrid(*([g] * model.n), indexing="ij"), -1).reshape(-1, model.n)
        vals = np.array([conjugate(model, t, x, vv) for vv in mesh])
        keep = np.isfinite(vals) & (vals <= cap)
        if not np.any(keep):
            raise CapTooLowError()
        low = np.column_stack([mesh[keep], vals[keep]])
        top = np.column_stack([mesh[keep], np.full(keep.sum(), cap)])
        body = PointCloudBody(np.vstack([low, top]))
    return EpigraphSlice(model, float(t), x, cap, window, body, band)


def hausdorff_slice_gap(model: HamiltonianModel, t, x, y, eta_cap: float | None = None):
    """Hausdorff distance between the truncated slices at ``x`` and ``y``.

    Returns ``(gap, bound)`` where ``bound = 2 k_R(t) |x - y|`` with
    ``R = max(|x|, |y|)``.
    """
    from .convex_core import hausdorff

    if eta_cap is None:
        eta_cap = max(default_cap(model, t, x), default_cap(model, t, y))
    sx = epigraph_slice(model, t, x, eta_cap)
    sy = epigraph_slice(model, t, y, eta_cap)
    radius = max(float(np.linalg.norm(np.atleast_1d(x))), float(np.linalg.norm(np.atleast_1d(y))))
    bound = 2.0 * model.k(t, radius) * float(np.linalg.norm(np.atleast_1d(x) - np.atleast_1d(y)))
    return hausdorff(sx.body, sy.body), bound


# ---------------------------------------------------------------------------
# exact epigraph / ball intersection for n == 1


@dataclass(frozen=True)
class _EpiGeometry:
    """Per-(t, x) data of the one-dimensional epigraph."""

    h: Callable
    lo: float
    hi: float
    vmin: float
    hmin: float
    h_lo: float
    h_hi: float


def _geometry(model: HamiltonianModel, t, x) -> _EpiGeometry:
    lo, hi = domain_interval(model, t, x)
    h = _conj_fn(model, t, x)
    if model.conjugate_argmin is not None:
        vmin = float(np.asarray(model.conjugate_argmin(t, x)))
        hmin = float(h(np.array(vmin)))
    else:
        vmin, hmin = _argmin_conj(h, lo, hi)
    ends = h(np.array([lo, hi]))
    return _EpiGeometry(h, float(lo), float(hi), vmin, hmin, float(ends[0]), float(ends[1]))


def _conj_fn(model, t, x):
    if model.closed_conjugate is not None:
        cc = model.closed_conjugate

        def h(v):
            return np.asarray(cc(t, x, v), dtype=float)
    else:
        def h(v):
            return np.asarray(conjugate_numeric(model, t, x, v), dtype=float)
    return h


def epigraph_distance(model: HamiltonianModel, t, x, anchor, cap: float = np.inf, geom=None):
    """Distance from ``anchor`` to the (possibly truncated) epigraph and the nearest point."""
    av, ae = float(anchor[0]), float(anchor[1])
    g = _geometry(model, t, x) if geom is None else geom
    lo, hi, h = g.lo, g.hi, g.h
    lift = max(0.0, ae - cap) if np.isfinite(cap) else 0.0
    if hi - lo <= 0:
        eta = min(max(ae, g.hmin), cap)
        return math.hypot(av - lo, ae - eta), np.array([lo, eta])

    def obj(v):
        hv = h(v)
        gap = np.maximum(0.0, hv - ae) + lift
        with np.errstate(invalid="ignore"):
            return np.where(np.isfinite(hv) & (hv <= cap), (v - av) ** 2 + gap * gap, np.inf)

    # convex bowl in v: bounded Brent, then polish against the domain ends
    res = minimize_scalar(lambda v: min(float(obj(np.array(v))), 1e300), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-13 * (1 + abs(lo) + abs(hi)), "maxiter": 500})
    vbest = res.x
    cands = np.array([float(vbest), lo, hi, min(max(av, lo), hi)])
    vals = obj(cands)
    j = int(np.argmin(vals))
    vstar = float(cands[j])
    hv = float(h(np.array(vstar)))
    eta = min(max(ae, hv), cap)
    return math.sqrt(float(vals[j])), np.array([vstar, eta])


def _branch_samples(g: _EpiGeometry, a, r, top, n_graph):
    """Graph points on both monotone branches, dense in v and in height."""
    av, ae = a
    if g.hmin > top:
        return np.empty((0, 2))
    ends = np.array([e for e in (g.lo, g.hi) if e != g.vmin])
    if ends.size == 0:
        return np.array([[g.vmin, g.hmin]])
    h_ends = g.h(ends)
    far = ends.copy()
    steep = ~(h_ends <= top)
    if np.any(steep):
        far[steep] = _bisect(lambda v: g.h(v) <= top, np.full(steep.sum(), g.vmin), ends[steep], iters=32)[0]
    parts = [far, [g.vmin]]
    for f in far:
        lo_v, hi_v = sorted((g.vmin, f))
        lo_v, hi_v = max(lo_v, av - r), min(hi_v, av + r)
        if hi_v > lo_v:
            parts.append(np.linspace(lo_v, hi_v, n_graph // 2))
    e_lo = max(g.hmin, ae - r)
    if top > e_lo:
        levels = e_lo + (top - e_lo) * np.linspace(0.0, 1.0, n_graph // 2) ** 2
        levels = levels[levels > g.hmin]
        if levels.size:
            lv = np.tile(levels, far.size)
            outer = np.repeat(far, levels.size)
            # only needs to land on the graph, not on the exact level
            v_lv, _ = _bisect(lambda v: g.h(v) <= lv, np.full(lv.shape, g.vmin), outer, iters=16)
            parts.append(v_lv)
    vs = np.unique(np.concatenate(parts))
    return np.column_stack([vs, g.h(vs)])


def epigraph_ball_intersection(model: HamiltonianModel, t, x, anchor, cap: float = np.inf,
                               n_graph: int = 256, n_circle: int = 720):
    """``E ∩ B(anchor, 2 d(anchor, E))`` for the epigraph ``E`` of ``H*(t,x,.)``.

    Returns ``(polygon, distance, nearest_point)``. The polygon's boundary is
    assembled from graph samples, circle nodes, vertical sides of a closed
    domain and the exact crossing points between these pieces.
    """
    a = np.asarray(anchor, dtype=float)
    g = _geometry(model, t, x)
    d, near = epigraph_distance(model, t, x, a, cap, geom=g)
    if d <= 1e-15 * (1 + float(np.max(np.abs(a)))):
        return Polygon(a[None, :], _ordered=True), 0.0, a.copy()
    r = 2.0 * d
    av, ae = a
    h = g.h
    parts = [near[None, :]]

    def gap2(p):
        return np.sum((p - a) ** 2, axis=-1) - r * r

    top = min(cap, ae + r)
    gr = _branch_samples(g, a, r, top, n_graph)
    fin = np.isfinite(gr[:, 1]) & (gr[:, 1] <= cap)
    gr = gr[fin]
    if gr.shape[0]:
        ins = gap2(gr) <= 0
        parts.append(gr[ins])
        flip = np.nonzero(ins[:-1] != ins[1:])[0]
        if flip.size:
            v_in = np.where(ins[flip], gr[flip, 0], gr[flip + 1, 0])
            v_out = np.where(ins[flip], gr[flip + 1, 0], gr[flip, 0])
            # shrink each bracket, then intersect its chord with the circle exactly
            v_a, v_b = _bisect(lambda v: gap2(np.column_stack([v, h(v)])) <= 0, v_in, v_out, iters=20)
            p_a = np.column_stack([v_a, h(v_a)])
            p_b = np.column_stack([v_b, h(v_b)])
            fine = np.all(np.isfinite(p_b), axis=1)
            parts.append(_segment_circle_hits(p_a[fine], p_b[fine], a, r))
            parts.append(p_a)
    # vertical sides of a closed domain
    for side, hs in {(g.lo, g.h_lo), (g.hi, g.h_hi)}:
        if not np.isfinite(hs):
            continue
        if gap2(np.array([side, hs])) <= 0 and hs <= cap:
            parts.append(np.array([[side, hs]]))
        w = r * r - (side - av) ** 2
        if w >= 0:
            for eta in (ae - math.sqrt(w), ae + math.sqrt(w)):
                if hs <= eta <= cap:
                    parts.append(np.array([[side, eta]]))
        if np.isfinite(cap) and hs <= cap and gap2(np.array([side, cap])) <= 0:
            parts.append(np.array([[side, cap]]))
    if np.isfinite(cap):
        w = r * r - (cap - ae) ** 2
        if w >= 0:
            for v in (av - math.sqrt(w), av + math.sqrt(w)):
                if float(h(np.array(v))) <= cap:
                    parts.append(np.array([[v, cap]]))
    # circle nodes inside the epigraph, refined between consecutive crossings
    th = 2 * np.pi * np.arange(n_circle) / n_circle
    hits = np.vstack(parts)
    on_circle = np.abs(gap2(hits)) <= 1e-9 * r * r
    if np.count_nonzero(on_circle) >= 2:
        ang = np.sort(np.arctan2(hits[on_circle, 1] - ae, hits[on_circle, 0] - av))
        ang = np.concatenate([ang, [ang[0] + 2 * np.pi]])
        fills = [np.linspace(ang[i], ang[i + 1], 66)[1:-1] for i in range(ang.size - 1)
                 if ang[i + 1] - ang[i] < np.pi]
        th = np.concatenate([th] + fills)
    circ = np.column_stack([av + r * np.cos(th), ae + r * np.sin(th)])
    hc = h(circ[:, 0])
    keep = np.isfinite(hc) & (hc <= circ[:, 1]) & (circ[:, 1] <= cap)
    parts.append(circ[keep])
    return Polygon(np.vstack(parts)), d, near


# ---------------------------------------------------------------------------
# model sanity checks


def check_model(model: HamiltonianModel, t_samples, radius: float = 2.0, n_samples: int = 200, seed: int = 0):
    """Sample the convexity, growth and local Lipschitz hypotheses.

    Returns a dict of worst observed excess per hypothesis; positive values
    indicate violations. Growth/Lipschitz excesses only warn.
    """
    rng = np.random.default_rng(seed)
    worst = {"convexity": -np.inf, "growth": -np.inf, "x_lipschitz": -np.inf}
    for t in np.atleast_1d(t_samples):
        for _ in range(n_samples):
            x = rng.uniform(-radius, radius, model.n)
            y = rng.uniform(-radius, radius, model.n)
            p = rng.uniform(-5, 5, model.n)
            q = rng.uniform(-5, 5, model.n)
            xs, ys, ps, qs = (z[0] if model.n == 1 else z for z in (x, y, p, q))
            hm = float(model.H(t, xs, 0.5 * (ps + qs)))
            worst["convexity"] = max(worst["convexity"], hm - 0.5 * float(model.H(t, xs, ps) + model.H(t, xs, qs)))
            dp = abs(float(model.H(t, xs, ps) - model.H(t, xs, qs)))
            worst["growth"] = max(worst["growth"], dp - model.c(t) * (1 + np.linalg.norm(x)) * np.linalg.norm(p - q))
            dx = abs(float(model.H(t, xs, ps) - model.H(t, ys, ps)))
            worst["x_lipschitz"] = max(worst["x_lipschitz"], dx - model.k(t, radius) * (1 + np.linalg.norm(p)) * np.linalg.norm(x - y))
    if worst["convexity"] > 1e-9:
        raise ModelError(f"convexity in p violated by {worst['convexity']:.3g}")
    for key in ("growth", "x_lipschitz"):
        if worst[key] > 1e-9:
            warnings.warn(f"model {model.name}: sampled {key} bound exceeded by {worst[key]:.3g}")
    return worst


# ---------------------------------------------------------------------------
# builtin registry


def _sqrt_model(eps: float = 0.0) -> HamiltonianModel:
    eps = float(eps)

    def xeff(x):
        return np.sqrt(np.asarray(x, dtype=float) ** 2 + eps * eps)

    def ham(t, x, p):
        s = np.abs(xeff(x) * np.asarray(p, dtype=float))
        return np.where(s > 1.0, (np.sqrt(s) - 1.0) ** 2, 0.0)

    def conj(t, x, v):
        xe = xeff(x)
        av = np.abs(np.asarray(v, dtype=float))
        inside = av < xe
        val = np.where(inside, av / np.where(inside, xe - av, 1.0), np.inf)
        return np.where((xe == 0) & (av == 0), 0.0, val)

    def dom(t, x):
        r = xeff(x)
        return -r, r

    return HamiltonianModel("sqrt_example", 1, ham, lambda t: 1.0 + eps, lambda t, R: 1.0,
                            conj, dom, lambda t, x: 0.0 * np.asarray(x, dtype=float), params={"eps": eps})


def _zero_model(n: int = 1) -> HamiltonianModel:
    n = int(n)

    def ham(t, x, p):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(p)).shape) if n == 1 else 0.0

    def conj(t, x, v):
        v = np.asarray(v, dtype=float)
        if n == 1:
            x, v = np.broadcast_arrays(np.asarray(x, dtype=float), v)
            return np.where(v == 0, 0.0, np.inf)
        return 0.0 if np.all(v == 0) else np.inf

    return HamiltonianModel("zero", n, ham, lambda t: 0.0, lambda t, R: 0.0, conj,
                            (lambda t, x: (0.0 * np.asarray(x, dtype=float),) * 2) if n == 1 else None,
                            lambda t, x: 0.0 * np.asarray(x, dtype=float), fixed_epigraph=True, params={"n": n})


def _quadratic_model(lip: float = 4.0, n: int = 1) -> HamiltonianModel:
    """``|p|^2 / 2`` with slopes capped at ``lip`` (Huber tail) for global growth bounds."""
    L = float(lip)
    n = int(n)

    def ham(t, x, p):
        p = np.asarray(p, dtype=float)
        r = np.abs(p) if n == 1 else np.linalg.norm(p)
        val = np.where(r <= L, 0.5 * r * r, L * r - 0.5 * L * L)
        if n == 1:
            return val * np.ones(np.broadcast(np.asarray(x), p).shape)
        return float(val)

    def conj(t, x, v):
        v = np.asarray(v, dtype=float)
        if n == 1:
            x, v = np.broadcast_arrays(np.asarray(x, dtype=float), v)
            return np.where(np.abs(v) <= L, 0.5 * v * v, np.inf)
        r = float(np.linalg.norm(v))
        return 0.5 * r * r if r <= L else np.inf

    return HamiltonianModel("quadratic", n, ham, lambda t: L, lambda t, R: 0.0, conj,
                            (lambda t, x: (0.0 * np.asarray(x, dtype=float) - L, 0.0 * np.asarray(x, dtype=float) + L))
                            if n == 1 else None, lambda t, x: 0.0 * np.asarray(x, dtype=float),
                            fixed_epigraph=True, params={"lip": L, "n": n})


def linear_drift(drift: Callable | None = None, running_cost: Callable | None = None, *,
                 growth: float | Callable = None, lipschitz: Callable | None = None,
                 drift_const: float = 0.0, drift_gain: float = -1.0,
                 cost_const: float = 0.0, cost_quad: float = 0.5) -> HamiltonianModel:
    """``H = p * b(t,x) - l0(t,x)`` with conjugate the indicator of ``{b}`` lifted by ``l0``.

    Without callables the drift is ``drift_const + drift_gain * x`` and the
    running cost ``cost_const + cost_quad * x**2``.
    """
    if drift is None:
        b0, b1 = float(drift_const), float(drift_gain)

        def drift(t, x):
            return b0 + b1 * np.asarray(x, dtype=float)

        growth = max(abs(b0), abs(b1)) if growth is None else growth
    if running_cost is None:
        q0, q1 = float(cost_const), float(cost_quad)

        def running_cost(t, x):
            return q0 + q1 * np.asarray(x, dtype=float) ** 2

        if lipschitz is None:
            gain = abs(float(drift_gain))

            def lipschitz(t, R):
                return max(gain, 2 * abs(q1) * R)
    if growth is None or lipschitz is None:
        raise ValueError("custom drift/cost need explicit growth and lipschitz functions")
    c_fun = growth if callable(growth) else (lambda t, g=float(growth): g)

    def ham(t, x, p):
        return np.asarray(p, dtype=float) * drift(t, x) - running_cost(t, x)

    def conj(t, x, v):
        x, v = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(v, dtype=float))
        return np.where(v == drift(t, x), running_cost(t, x) + 0.0 * v, np.inf)

    def dom(t, x):
        b = np.asarray(drift(t, x), dtype=float)
        return b, b

    params = {"drift_const": drift_const, "drift_gain": drift_gain, "cost_const": cost_const, "cost_quad": cost_quad}
    return HamiltonianModel("linear_drift", 1, ham, c_fun, lipschitz, conj, dom,
                            lambda t, x: np.asarray(drift(t, x), dtype=float), params=params)


def shifted(base: HamiltonianModel, delta: float) -> HamiltonianModel:
    """``H + delta``; the conjugate drops by ``delta`` and the domain is unchanged."""
    delta = float(delta)

    def ham(t, x, p):
        return base.H(t, x, p) + delta

    conj = None
    if base.closed_conjugate is not None:
        def conj(t, x, v):
            return base.closed_conjugate(t, x, v) - delta

    params = dict(base.params)
    params["shift"] = params.get("shift", 0.0) + delta
    return replace(base, hamiltonian=ham, closed_conjugate=conj, params=params,
                   name=base.name if base.name.startswith("shifted") else f"shifted({base.name})")


_REGISTRY = {
    "sqrt_example": _sqrt_model,
    "zero": _zero_model,
    "quadratic": _quadratic_model,
    "linear_drift": linear_drift,
}


def builtin_names() -> list[str]:
    return sorted(_REGISTRY) + ["shifted"]


def builtin(name: str, **params) -> HamiltonianModel:
    """Look up a builtin model. ``shifted`` takes ``base`` and ``delta`` params."""
    if name == "shifted":
        base = params.pop("base", "sqrt_example")
        delta = params.pop("delta", 0.0)
        base_model = base if isinstance(base, HamiltonianModel) else builtin(base, **params)
        return shifted(base_model, delta)
    if name not in _REGISTRY:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(builtin_names())}")
    return _REGISTRY[name](**params)


def distance_to_slice(sl: EpigraphSlice, point) -> float:
    return distance_to(sl.body, point)
