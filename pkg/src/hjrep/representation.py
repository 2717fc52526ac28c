"""Lipschitz parameterization of the epigraph map of a convex conjugate.

For a model ``H`` and a point ``a`` in ``R^{n+1}`` the map

    e(t, x, a) = steiner_point( E(t,x) ∩ B(a, 2 d(a, E(t,x))) ),

with ``E(t,x)`` the epigraph of ``v -> H*(t,x,v)``, is split as
``e = (f, l)``: a velocity and a running cost. Points of the epigraph are
fixed by the map, so ``H(t,x,p) = sup_a <p, f> - l`` is attained on
graph points.

Audits in this module check the sublinear growth bounds, the fixed-point
property, the Lipschitz estimate and the sup-representation residual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .convex_core import (
    PointCloudBody, Polygon, clamp_intersection, distance_to, steiner_point,
)
from .hamiltonian import (
    BAND, HamiltonianModel, _bisect, banded_interval, conjugate, conjugate_domain_bound,
    default_cap, domain_arrays, domain_interval, epigraph_slice, golden_max,
)

EPS_EXTRA = 1e-6
LIPSCHITZ_SLACK = 0.05


@dataclass(frozen=True)
class RepresentationOutput:
    """Value of the parameterization at one ``(t, x, a)``.

    ``f`` is the velocity part (float when n = 1), ``l`` the cost part,
    ``distance`` is ``d(a, E)``, ``diameter`` the diameter of the clamped
    body and ``nodes`` its vertex count.
    """

    f: object
    l: float
    distance: float
    body: object = None

    @property
    def diameter(self) -> float:
        return 0.0 if self.body is None else self.body.diameter()

    @property
    def nodes(self) -> int:
        if self.body is None:
            return 1
        return self.body.vertices.shape[0] if isinstance(self.body, Polygon) else self.body.points.shape[0]

    @property
    def point(self) -> np.ndarray:
        return np.append(np.atleast_1d(self.f), self.l)


def _in_epigraph(model, t, x, a) -> bool:
    v = a[0] if model.n == 1 else a[:-1]
    h = conjugate(model, t, x, v)
    return bool(np.isfinite(h) and h <= a[-1])


def parameterize(model: HamiltonianModel, t, x, a) -> RepresentationOutput:
    """Evaluate ``e(t, x, a) = (f, l)``.

    Anchors already in the epigraph are returned unchanged (the clamped body
    is the singleton ``{a}``).
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (model.n + 1,) or not np.all(np.isfinite(a)):
        raise ValueError("anchor must be a finite vector of length n+1")
    if model.n == 1:
        res = _batch_1d(model, float(t), np.array([float(x)]), a[None, :], keep_points=True)
        e = res.points[0]
        body = None if res.bodies[0] is None else Polygon(res.bodies[0], _ordered=True)
        return RepresentationOutput(float(e[0]), float(e[1]), float(res.distance[0]), body)
    if _in_epigraph(model, t, x, a):
        return RepresentationOutput(a[:-1].copy(), float(a[-1]), 0.0)
    # higher dimensions: pick a cap the clamping ball cannot reach
    base = epigraph_slice(model, t, x)
    v0 = base.body.points[np.argmin(base.body.points[:, -1])]
    cap = max(base.cap, a[-1] + 2 * float(np.linalg.norm(a - v0)) + 1.0)
    sl = epigraph_slice(model, t, x, cap)
    dist = distance_to(sl.body, a)
    body = clamp_intersection(sl.body, a)
    e = steiner_point(body)
    return RepresentationOutput(e[:-1], float(e[-1]), dist, body)


def parameterize_many(model: HamiltonianModel, t, x, anchors) -> np.ndarray:
    """Rows ``e(t, x_i, a_i)`` for a batch at a common time ``t``.

    ``x`` may be a scalar or one state per row. For ``n = 1`` the whole batch
    is processed with array operations.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    k = anchors.shape[0]
    if model.n == 1:
        xs = np.broadcast_to(np.asarray(x, dtype=float), (k,))
        return _batch_1d(model, float(t), xs, anchors).points
    xs = np.broadcast_to(np.asarray(x, dtype=float), (k, model.n))
    out = anchors.copy()
    for i in range(k):
        out[i] = parameterize(model, t, xs[i], anchors[i]).point
    return out


# ---------------------------------------------------------------------------
# batched construction for one-dimensional states


@dataclass
class _BatchResult:
    points: np.ndarray
    distance: np.ndarray
    bodies: list | None = None


def _conj_rows(model, t, xr, v):
    xx = xr if np.ndim(v) == 1 else xr[:, None]
    return np.asarray(conjugate(model, t, xx, v), dtype=float)


def _circle_hits(p0, p1, center, radius):
    """Crossings of chords p0->p1 with per-row circles; returns (index, point)."""
    d = p1 - p0
    f = p0 - center
    a = np.einsum("ij,ij->i", d, d)
    b = 2 * np.einsum("ij,ij->i", f, d)
    c = np.einsum("ij,ij->i", f, f) - radius * radius
    disc = b * b - 4 * a * c
    ok = (a > 0) & (disc >= 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    idx, pts = [], []
    for sgn in (-1.0, 1.0):
        tt = (-b + sgn * sq) / np.where(ok, 2 * a, 1.0)
        m = ok & (tt >= 0) & (tt <= 1)
        idx.append(np.nonzero(m)[0])
        pts.append(p0[m] + tt[m, None] * d[m])
    return np.concatenate(idx), np.vstack(pts)


def _batch_1d(model, t, xs, anchors, n_graph=128, n_circle=720, n_fill=64, keep_points=False):
    """Vectorized ``e(t, x_i, a_i)`` for ``n = 1``.

    The clamped body of each row is described by points on its boundary:
    graph samples inside the disc (uniform in v and in height on both
    monotone branches), exact graph/circle crossings, vertical sides of a
    closed domain, the nearest epigraph point and circle nodes inside the
    epigraph (refined between crossings). Sorting these by angle around
    their centroid gives the boundary polygon, whose Steiner point is the
    exterior-angle weighted vertex average.
    """
    A = anchors
    B = A.shape[0]
    out = A.copy()
    dist = np.zeros(B)
    bodies = [None] * B if keep_points else None
    h_a = _conj_rows(model, t, xs, A[:, 0])
    slow = np.nonzero(~(np.isfinite(h_a) & (h_a <= A[:, 1])))[0]
    if slow.size == 0:
        return _BatchResult(out, dist, bodies)
    xr = xs[slow]
    av, ae = A[slow, 0], A[slow, 1]
    R = slow.size
    rows = np.arange(R)

    def h(v, sel=None):
        return _conj_rows(model, t, xr if sel is None else xr[sel], v)

    lo, hi = domain_arrays(model, t, xr)
    if model.conjugate_argmin is not None:
        vmin = np.broadcast_to(np.asarray(model.conjugate_argmin(t, xr), dtype=float), (R,)).copy()
    else:
        _, vmin = golden_max(lambda v: -h(v), lo.copy(), hi.copy(), tol=1e-12, check_concave=False)
    hmin = h(vmin)
    h_lo, h_hi = h(lo), h(hi)
    flat = hi - lo <= 0

    # distance to the epigraph: convex bowl in v
    def bowl(v):
        hv = h(v)
        gap = np.maximum(0.0, hv - ae)
        return np.where(np.isfinite(hv), (v - av) ** 2 + gap * gap, np.inf)

    _, vb = golden_max(lambda v: -bowl(v), lo.copy(), hi.copy(), tol=1e-13, check_concave=False)
    cand = np.column_stack([vb, lo, hi, np.clip(av, lo, hi)])
    cval = np.column_stack([bowl(cand[:, j]) for j in range(4)])
    jbest = np.argmin(cval, axis=1)
    vnear = cand[rows, jbest]
    d = np.sqrt(cval[rows, jbest])
    hn = h(vnear)
    near = np.column_stack([vnear, np.maximum(ae, hn)])
    dist[slow] = d
    r = 2.0 * d
    top = ae + r
    ctr = np.column_stack([av, ae])

    ids, pts = [rows], [near]

    def in_disc(px, py, rr, cx, cy):
        return (px - cx) ** 2 + (py - cy) ** 2 <= rr * rr * (1 + 1e-13)

    # graph samples on both branches
    u = np.linspace(0.0, 1.0, n_graph)
    far = []
    for end, h_end in ((lo, h_lo), (hi, h_hi)):
        f = end.copy()
        steep = ~(h_end <= top)
        if np.any(steep):
            sel = np.nonzero(steep)[0]
            f[sel] = _bisect(lambda v, sel=sel: h(v, sel) <= top[sel], vmin[sel], end[sel], iters=32)[0]
        far.append(f)
    e_lo = np.maximum(hmin, ae - r)
    span = np.maximum(top - e_lo, 0.0)
    levels = e_lo[:, None] + span[:, None] * u[None, :] ** 2
    cols = [vmin[:, None], far[0][:, None], far[1][:, None]]
    for f in far:
        a0 = np.maximum(np.minimum(vmin, f), av - r)
        b0 = np.minimum(np.maximum(vmin, f), av + r)
        b0 = np.maximum(a0, b0)
        cols.append(a0[:, None] + (b0 - a0)[:, None] * u[None, :])
        lv, _ = _bisect(lambda v: h(v) <= levels, np.repeat(vmin[:, None], n_graph, 1),
                        np.repeat(f[:, None], n_graph, 1), iters=16)
        cols.append(lv)
    V = np.sort(np.concatenate(cols, axis=1), axis=1)
    H = h(V)
    fin = np.isfinite(H)
    Hs = np.where(fin, H, 0.0)
    ins = fin & in_disc(V, Hs, r[:, None], av[:, None], ae[:, None])
    ri, ci = np.nonzero(ins)
    ids.append(ri)
    pts.append(np.column_stack([V[ri, ci], H[ri, ci]]))
    flip = fin[:, :-1] & fin[:, 1:] & (ins[:, :-1] != ins[:, 1:])
    fr, fc = np.nonzero(flip)
    hit_ids, hit_pts = [], []
    if fr.size:
        v_in = np.where(ins[fr, fc], V[fr, fc], V[fr, fc + 1])
        v_out = np.where(ins[fr, fc], V[fr, fc + 1], V[fr, fc])
        xf, cf, rf = xr[fr], ctr[fr], r[fr]

        def inside(v):
            hv = _conj_rows(model, t, xf, v)
            return np.isfinite(hv) & in_disc(v, np.where(np.isfinite(hv), hv, 0.0), rf, cf[:, 0], cf[:, 1])

        va, vb2 = _bisect(inside, v_in, v_out, iters=20)
        pa = np.column_stack([va, _conj_rows(model, t, xf, va)])
        pb = np.column_stack([vb2, _conj_rows(model, t, xf, vb2)])
        ok = np.all(np.isfinite(pb), axis=1)
        k, hp = _circle_hits(pa[ok], pb[ok], cf[ok], rf[ok])
        ids += [fr, fr[ok][k]]
        pts += [pa, hp]
        hit_ids.append(fr[ok][k])
        hit_pts.append(hp)
    # vertical sides of a closed domain
    for end, h_end in ((lo, h_lo), (hi, h_hi)):
        okr = np.isfinite(h_end)
        corner = okr & in_disc(end, np.where(okr, h_end, 0.0), r, av, ae)
        ids.append(rows[corner])
        pts.append(np.column_stack([end[corner], h_end[corner]]))
        w = r * r - (end - av) ** 2
        for sgn in (-1.0, 1.0):
            eta = ae + sgn * np.sqrt(np.maximum(w, 0.0))
            m = okr & (w >= 0) & (eta >= h_end)
            ids.append(rows[m])
            pts.append(np.column_stack([end[m], eta[m]]))
            hit_ids.append(rows[m])
            hit_pts.append(np.column_stack([end[m], eta[m]]))
    # circle nodes and refinement between consecutive crossings
    th = 2 * np.pi * np.arange(n_circle) / n_circle
    cxv = av[:, None] + r[:, None] * np.cos(th)[None, :]
    cyv = ae[:, None] + r[:, None] * np.sin(th)[None, :]
    hc = h(cxv)
    m = np.isfinite(hc) & (hc <= cyv)
    ri, ci = np.nonzero(m)
    ids.append(ri)
    pts.append(np.column_stack([cxv[ri, ci], cyv[ri, ci]]))
    if hit_ids:
        hid = np.concatenate(hit_ids)
        hpt = np.vstack(hit_pts)
        if hid.size:
            ang = np.arctan2(hpt[:, 1] - ae[hid], hpt[:, 0] - av[hid])
            order = np.lexsort((ang, hid))
            hid, ang = hid[order], ang[order]
            nxt = np.arange(hid.size) + 1
            last = np.r_[hid[1:] != hid[:-1], True]
            first_idx = np.r_[0, np.nonzero(hid[1:] != hid[:-1])[0] + 1]
            grp = np.cumsum(np.r_[True, hid[1:] != hid[:-1]]) - 1
            nxt[last] = first_idx[grp[last]]
            gap = (ang[nxt] - ang) % (2 * np.pi)
            use = (gap > 0) & (gap < np.pi)
            if np.any(use):
                frac = np.arange(1, n_fill + 1) / (n_fill + 1)
                fa = ang[use][:, None] + gap[use][:, None] * frac[None, :]
                fid = np.repeat(hid[use], n_fill)
                fx = av[fid] + r[fid] * np.cos(fa.ravel())
                fy = ae[fid] + r[fid] * np.sin(fa.ravel())
                hf = _conj_rows(model, t, xr[fid], fx)
                m = np.isfinite(hf) & (hf <= fy)
                ids.append(fid[m])
                pts.append(np.column_stack([fx[m], fy[m]]))
    ids = np.concatenate(ids)
    P = np.vstack(pts)
    e = _steiner_from_boundary(ids, P, R, r, flat, keep_points)
    out[slow] = e[0]
    if keep_points:
        for k, i in enumerate(slow):
            bodies[i] = e[1][k]
    return _BatchResult(out, dist, bodies)


def _steiner_from_boundary(ids, P, R, r, flat, keep_points):
    """Steiner points of convex polygons given by unordered boundary points."""
    res = np.zeros((R, 2))
    # vertical segments: midpoint of the extreme heights
    ymin = np.full(R, np.inf)
    ymax = np.full(R, -np.inf)
    np.minimum.at(ymin, ids, P[:, 1])
    np.maximum.at(ymax, ids, P[:, 1])
    xmean = np.bincount(ids, P[:, 0], R) / np.maximum(np.bincount(ids, None, R), 1)
    res[flat, 0] = xmean[flat]
    res[flat, 1] = 0.5 * (ymin[flat] + ymax[flat])
    sel = ~flat[ids]
    ids2, P2 = ids[sel], P[sel]
    if ids2.size:
        cnt = np.bincount(ids2, None, R)
        cx = np.bincount(ids2, P2[:, 0], R) / np.maximum(cnt, 1)
        cy = np.bincount(ids2, P2[:, 1], R) / np.maximum(cnt, 1)
        ang = np.arctan2(P2[:, 1] - cy[ids2], P2[:, 0] - cx[ids2])
        order = np.lexsort((ang, ids2))
        ids2, P2 = ids2[order], P2[order]
        # drop near-duplicates of the preceding point in the same row
        tol = 1e-12 * (1.0 + r[ids2])
        step = np.r_[np.inf, np.hypot(*(P2[1:] - P2[:-1]).T)]
        same = np.r_[False, ids2[1:] == ids2[:-1]]
        keep = ~(same & (step <= tol))
        ids2, P2 = ids2[keep], P2[keep]
        # prune reflex and backtracking vertices; they are never hull vertices
        while True:
            prv, nxt, size = _ring_neighbors(ids2)
            e_in = P2 - P2[prv]
            e_out = P2[nxt] - P2
            cross = e_in[:, 0] * e_out[:, 1] - e_in[:, 1] * e_out[:, 0]
            dot = np.einsum("ij,ij->i", e_in, e_out)
            scale = np.hypot(*e_in.T) * np.hypot(*e_out.T)
            reflex = (size > 2) & ((cross < 0) | ((dot < 0) & (cross <= 1e-12 * scale)))
            if not np.any(reflex):
                break
            ids2, P2 = ids2[~reflex], P2[~reflex]
        turn = np.arctan2(cross, dot)
        turn = np.where(size <= 2, np.pi, turn)
        turn = np.where(size == 1, 1.0, turn)
        wsum = np.bincount(ids2, turn, R)
        ok = ~flat & (wsum != 0)
        res[ok, 0] = (np.bincount(ids2, turn * P2[:, 0], R) / np.where(wsum != 0, wsum, 1))[ok]
        res[ok, 1] = (np.bincount(ids2, turn * P2[:, 1], R) / np.where(wsum != 0, wsum, 1))[ok]
    bodies = None
    if keep_points:
        bodies = []
        for k in range(R):
            if flat[k]:
                bodies.append(np.array([[res[k, 0], ymin[k]], [res[k, 0], ymax[k]]]))
            else:
                bodies.append(P2[ids2 == k])
    return res, bodies


def _ring_neighbors(ids):
    """Cyclic predecessor/successor indices and group sizes for sorted row ids."""
    start = np.r_[True, ids[1:] != ids[:-1]]
    end = np.r_[ids[1:] != ids[:-1], True]
    first = np.nonzero(start)[0]
    last = np.nonzero(end)[0]
    grp = np.cumsum(start) - 1
    idx = np.arange(ids.size)
    nxt = np.where(end, first[grp], idx + 1)
    prv = np.where(start, last[grp], idx - 1)
    return prv, nxt, (last - first + 1)[grp]


def growth_bounds(model: HamiltonianModel, t, x, a):
    """``(|f| bound, lower l bound, upper l bound)`` from the growth constants."""
    h0 = abs(float(np.asarray(model.H(t, x, 0.0 if model.n == 1 else np.zeros(model.n)))))
    cx = conjugate_domain_bound(model, t, x)
    na = float(np.linalg.norm(a))
    return cx, -h0, 2 * h0 + 2 * cx + 3 * na


def check_growth(model: HamiltonianModel, t, x, a, out: RepresentationOutput) -> bool:
    """Exact check of the sublinear growth inequalities at one evaluation."""
    fb, lo, hi = growth_bounds(model, t, x, a)
    return bool(np.linalg.norm(np.atleast_1d(out.f)) <= fb and lo <= out.l <= hi)


def growth_audit(model: HamiltonianModel, t, x, anchors, evaluated=None) -> AuditRecord:
    """Count evaluations violating the sublinear growth inequalities (exact check, n = 1).

    ``evaluated`` may carry precomputed ``e`` rows for ``anchors``.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    e = parameterize_many(model, t, x, anchors) if evaluated is None else np.asarray(evaluated)
    h0 = np.abs(np.asarray(model.H(t, x, 0.0), dtype=float))
    cx = conjugate_domain_bound(model, t, x)
    na = np.linalg.norm(anchors, axis=1)
    bad = (np.abs(e[:, 0]) > cx) | (e[:, 1] < -h0) | (e[:, 1] > 2 * h0 + 2 * cx + 3 * na)
    return AuditRecord("growth", 0.0, float(np.sum(bad)), not np.any(bad), int(anchors.shape[0]))


def representation_residual(model: HamiltonianModel, t, x, p, v_grid) -> float:
    """``|H(t,x,p) - max_v (p f - l)|`` over graph anchors ``(v, H*(t,x,v))``."""
    v_grid = np.asarray(v_grid, dtype=float)
    if model.n != 1:
        raise ValueError("representation_residual is implemented for n = 1")
    h = np.asarray(conjugate(model, t, x, v_grid))
    ok = np.isfinite(h)
    anchors = np.column_stack([v_grid[ok], h[ok]])
    e = parameterize_many(model, t, x, anchors)
    sup = float(np.max(p * e[:, 0] - e[:, 1]))
    return abs(float(model.H(t, x, p)) - sup)


def banded_grid(model: HamiltonianModel, t, x, step: float = 1e-3, band: float = BAND) -> np.ndarray:
    """Grid of step ``step`` through 0 inside the banded conjugate domain."""
    lo, hi = domain_interval(model, t, x)
    blo, bhi = banded_interval(lo, hi, band)
    if bhi <= blo:
        return np.array([0.5 * (lo + hi)])
    k_lo, k_hi = math.ceil(blo / step), math.floor(bhi / step)
    grid = step * np.arange(k_lo, k_hi + 1)
    return grid if grid.size else np.array([0.5 * (blo + bhi)])


@dataclass(frozen=True)
class AuditRecord:
    """Serializable audit outcome."""

    name: str
    bound: float
    observed: float
    passed: bool
    samples: int = 0
    seed: int | None = None
    extra: dict | None = None

    @property
    def margin(self) -> float:
        return self.bound - self.observed

    def as_dict(self) -> dict:
        d = {"name": self.name, "bound": self.bound, "observed": self.observed,
             "margin": self.margin, "pass": self.passed, "samples": self.samples, "seed": self.seed}
        if self.extra:
            d.update(self.extra)
        return d


def anchor_box_radius(model: HamiltonianModel, t_values, radius: float) -> float:
    """``3 (cap + domain radius)`` over the sampled times at ``|x| = radius``."""
    caps = []
    for t in np.atleast_1d(t_values):
        for x in (-radius, 0.0, radius):
            xx = x if model.n == 1 else np.full(model.n, x / math.sqrt(model.n))
            caps.append(default_cap(model, t, xx) + conjugate_domain_bound(model, t, xx))
    return 3.0 * max(caps)


def _sample_anchor(rng, model, t, x, box):
    """Mix of anchors near the graph and anchors spread over the box."""
    kind = rng.integers(3)
    if kind == 0 and model.n == 1:
        lo, hi = domain_interval(model, t, x)
        blo, bhi = banded_interval(lo, hi)
        v = rng.uniform(blo, bhi) if bhi > blo else lo
        h = float(conjugate(model, t, x, v))
        return np.array([v + rng.normal(scale=0.3), h + rng.normal(scale=0.5 + 0.1 * abs(h))])
    scale = box * 10.0 ** rng.uniform(-3, 0)
    a = rng.uniform(-1, 1, model.n + 1)
    return scale * a / max(1.0, float(np.linalg.norm(a)))


def lipschitz_audit(model: HamiltonianModel, R: float, sample_count: int, seed: int,
                    T: float = 1.0, box: float | None = None, n_times: int = 101) -> AuditRecord:
    """Largest ``|e(t,x,a) - e(t,y,b)| / (k_R(t)|x-y| + |a-b|)`` over random pairs.

    Times are drawn from a uniform grid of ``n_times`` points on ``[0, T]``
    so that pairs sharing a time are evaluated in one batch. Half of the
    pairs are close (relative separations down to 1e-3), the rest
    independent. Passes when the ratio stays below ``10 (n+1)`` plus slack.
    """
    rng = np.random.default_rng(seed)
    box = anchor_box_radius(model, [0.0, T], R) if box is None else box
    t_grid = np.linspace(0.0, T, n_times)
    n = model.n
    ts = np.empty(sample_count)
    X = np.empty((sample_count, n))
    Y = np.empty((sample_count, n))
    A = np.empty((sample_count, n + 1))
    B = np.empty((sample_count, n + 1))
    for i in range(sample_count):
        t = float(t_grid[rng.integers(n_times)])
        x = _ball_point(rng, n, R)
        a = _sample_anchor(rng, model, t, x if n > 1 else float(x[0]), box)
        if rng.random() < 0.5:
            sep = 10.0 ** rng.uniform(-3, 0)
            y = _clip_ball(x + sep * rng.normal(size=n), R)
            b = a + sep * rng.normal(size=n + 1) * max(1.0, 0.1 * float(np.linalg.norm(a)))
        else:
            y = _ball_point(rng, n, R)
            b = _sample_anchor(rng, model, t, y if n > 1 else float(y[0]), box)
        ts[i], X[i], Y[i], A[i], B[i] = t, x, y, a, b
    EA = np.empty_like(A)
    EB = np.empty_like(B)
    for t in np.unique(ts):
        idx = np.nonzero(ts == t)[0]
        xs, ys = (X[idx, 0], Y[idx, 0]) if n == 1 else (X[idx], Y[idx])
        EA[idx] = parameterize_many(model, t, xs, A[idx])
        EB[idx] = parameterize_many(model, t, ys, B[idx])
    k = np.array([model.k(t, R) for t in ts])
    den = k * np.linalg.norm(X - Y, axis=1) + np.linalg.norm(A - B, axis=1)
    num = np.linalg.norm(EA - EB, axis=1)
    ok = den > 0
    ratio = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
    j = int(np.argmax(ratio)) if sample_count else 0
    worst = float(ratio[j]) if sample_count else 0.0
    worst_at = None
    if sample_count:
        worst_at = {"t": float(ts[j]), "x": X[j].tolist(), "y": Y[j].tolist(), "a": A[j].tolist(),
                    "b": B[j].tolist()}
    bound = 10.0 * (n + 1)
    return AuditRecord("lipschitz", bound, worst, worst <= bound * (1 + LIPSCHITZ_SLACK), sample_count, seed,
                       {"worst_pair": _plain(worst_at), "box": box, "R": R, "n_times": n_times})


def _plain(d):
    if d is None:
        return None
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}


def _ball_point(rng, n, R):
    z = rng.normal(size=n)
    z /= np.linalg.norm(z)
    return z * R * rng.random() ** (1.0 / n)


def _clip_ball(z, R):
    nz = float(np.linalg.norm(z))
    return z if nz <= R else z * (R / nz)


def extra_property_audit(model: HamiltonianModel, t, x, graph_samples) -> AuditRecord:
    """Max ``|e(t,x,a) - a|`` over epigraph anchors ``a = (v, H*(v) + s)``, ``s >= 0``.

    ``graph_samples`` is an array of ``(v, s)`` rows; rows with ``s < 0`` are
    ignored (they are not epigraph points).
    """
    gs = np.atleast_2d(np.asarray(graph_samples, dtype=float))
    gs = gs[gs[:, -1] >= 0]
    v = gs[:, 0] if model.n == 1 else gs[:, :-1]
    if model.n == 1:
        h = np.asarray(conjugate(model, t, x, v))
    else:
        h = np.array([conjugate(model, t, x, vv) for vv in v])
    keep = np.isfinite(h)
    anchors = np.column_stack([np.atleast_2d(v.T).T[keep] if model.n > 1 else v[keep], h[keep] + gs[keep, -1]])
    e = parameterize_many(model, t, x, anchors)
    dev = float(np.max(np.linalg.norm(e - anchors, axis=1))) if anchors.size else 0.0
    return AuditRecord("extra_property", EPS_EXTRA, dev, dev <= EPS_EXTRA, int(anchors.shape[0]))


def stability_gap(model_a: HamiltonianModel, model_b: HamiltonianModel, t_grid, x_grid, a_grid, p_grid):
    """``(sup |e_a - e_b|, sup |H_a - H_b|)`` over the product grids (n = 1)."""
    gap_e = 0.0
    gap_h = 0.0
    anchors = np.atleast_2d(np.asarray(a_grid, dtype=float))
    p_grid = np.asarray(p_grid, dtype=float)
    for t in np.atleast_1d(t_grid):
        for x in np.atleast_1d(x_grid):
            ea = parameterize_many(model_a, t, x, anchors)
            eb = parameterize_many(model_b, t, x, anchors)
            gap_e = max(gap_e, float(np.max(np.linalg.norm(ea - eb, axis=1))))
            gap_h = max(gap_h, float(np.max(np.abs(model_a.H(t, x, p_grid) - model_b.H(t, x, p_grid)))))
    return gap_e, gap_h


def shift_equivariance_gap(model: HamiltonianModel, delta: float, t_grid, x_grid, a_grid) -> float:
    """Max ``|e_shifted(t,x,a - (0,δ)) - (e(t,x,a) - (0,δ))|`` over the grids."""
    from .hamiltonian import shifted

    other = shifted(model, delta)
    anchors = np.atleast_2d(np.asarray(a_grid, dtype=float))
    lift = np.zeros(model.n + 1)
    lift[-1] = delta
    worst = 0.0
    for t in np.atleast_1d(t_grid):
        for x in np.atleast_1d(x_grid):
            ea = parameterize_many(model, t, x, anchors)
            eb = parameterize_many(other, t, x, anchors - lift)
            worst = max(worst, float(np.max(np.linalg.norm(eb - (ea - lift), axis=1))))
    return worst
