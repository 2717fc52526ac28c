"""Compact convex bodies in R^m and the set-valued primitives built on them.

Bodies are immutable. In the plane the workhorse is :class:`Polygon`, a
convex polygon stored by its counter-clockwise vertex list. Degenerate
polygons (a point or a segment) are allowed because epigraph slices of
indicator-type conjugates are segments.

The module provides support functions, Euclidean distances, the clamped
intersection ``K ∩ B(y, 2 d(y, K))``, Steiner points and Hausdorff
distances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist
from scipy.stats import qmc

EPS_POLY = 1e-9
EPS_GENERIC = 1e-6
EPS_STEINER = 1e-8
N_POLY = 720
N_SPHERE = 4096
N_SPHERE_MAX = 1 << 20


class DegenerateBodyError(ValueError):
    """Raised for empty or malformed bodies."""

    def __init__(self, msg: str = "degenerate body"):
        super().__init__(msg)


class QuadratureError(RuntimeError):
    """Steiner quadrature failed to converge."""


def _as_unit(direction) -> np.ndarray:
    u = np.asarray(direction, dtype=float)
    nrm = np.linalg.norm(u)
    if not np.isfinite(nrm) or abs(nrm - 1.0) > 1e-9:
        raise ValueError(f"direction must be a unit vector, got norm {nrm}")
    return u


class ConvexBody:
    """Base class. Subclasses implement ``support_many`` and ``nearest``."""

    dim: int

    def support_many(self, dirs: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def nearest(self, z) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def contains(self, z, tol: float = EPS_GENERIC) -> bool:
        z = np.asarray(z, dtype=float)
        return float(np.linalg.norm(self.nearest(z) - z)) <= tol

    def translate(self, shift) -> "ConvexBody":  # pragma: no cover
        raise NotImplementedError

    @property
    def tolerance(self) -> float:
        return EPS_GENERIC

    def diameter(self) -> float:  # pragma: no cover
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(ConvexBody):
    """Closed Euclidean ball."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        if c.ndim != 1 or not np.all(np.isfinite(c)):
            raise DegenerateBodyError()
        if not (np.isfinite(self.radius) and self.radius >= 0):
            raise DegenerateBodyError()
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.size

    def support_many(self, dirs):
        dirs = np.atleast_2d(dirs)
        return dirs @ self.center + self.radius * np.linalg.norm(dirs, axis=1)

    def nearest(self, z):
        z = np.asarray(z, dtype=float)
        off = z - self.center
        dist = np.linalg.norm(off)
        if dist <= self.radius:
            return z.copy()
        return self.center + off * (self.radius / dist)

    def translate(self, shift):
        return Ball(self.center + np.asarray(shift, dtype=float), self.radius)

    def diameter(self):
        return 2.0 * self.radius

    def to_polygon(self, n_vertices: int = N_POLY) -> "Polygon":
        """Inscribed regular polygon (plane only)."""
        if self.dim != 2:
            raise ValueError("to_polygon needs a planar ball")
        th = 2 * np.pi * np.arange(n_vertices) / n_vertices
        pts = self.center + self.radius * np.column_stack([np.cos(th), np.sin(th)])
        return Polygon(pts, _ordered=True)


def _hull_2d(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull vertices, collapsing collinear sets to a segment."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise DegenerateBodyError()
    if not np.all(np.isfinite(pts)):
        raise DegenerateBodyError("degenerate body: non-finite vertex")
    span = np.ptp(pts, axis=0)
    scale = max(float(np.max(np.abs(pts))), 1.0)
    if pts.shape[0] >= 3 and np.min(span) > 1e-13 * scale:
        try:
            hull = ConvexHull(pts)
            verts = pts[hull.vertices]
            area = hull.volume
            if area > 1e-14 * scale * max(float(np.max(span)), 1e-300):
                return verts
        except QhullError:
            pass
    # collinear or tiny: keep the two extreme points along the principal axis
    centered = pts - pts.mean(axis=0)
    if np.max(np.abs(centered)) <= 1e-15 * scale:
        return pts[:1].copy()
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[0]
    lo, hi = int(np.argmin(proj)), int(np.argmax(proj))
    if np.linalg.norm(pts[hi] - pts[lo]) <= 1e-15 * scale:
        return pts[lo:lo + 1].copy()
    return pts[[lo, hi]].copy()


@dataclass(frozen=True)
class Polygon(ConvexBody):
    """Convex polygon from an arbitrary planar point set (its convex hull)."""

    vertices: np.ndarray
    _ordered: bool = field(default=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] == 0:
            raise DegenerateBodyError()
        if not self._ordered:
            v = _hull_2d(v)
        elif not np.all(np.isfinite(v)):
            raise DegenerateBodyError("degenerate body: non-finite vertex")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    dim = 2

    @property
    def tolerance(self) -> float:
        return EPS_POLY

    @classmethod
    def rectangle(cls, lo, hi) -> "Polygon":
        (x0, y0), (x1, y1) = lo, hi
        return cls(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]))

    def support_many(self, dirs):
        dirs = np.atleast_2d(dirs)
        return np.max(dirs @ self.vertices.T, axis=1)

    def _edges(self):
        p = self.vertices
        return p, np.roll(p, -1, axis=0) - p

    def nearest(self, z):
        z = np.asarray(z, dtype=float)
        p, e = self._edges()
        if p.shape[0] >= 3:
            rel = z - p
            cross = e[:, 0] * rel[:, 1] - e[:, 1] * rel[:, 0]
            if np.all(cross >= 0.0):
                return z.copy()
        if p.shape[0] == 1:
            return p[0].copy()
        ee = np.einsum("ij,ij->i", e, e)
        t = np.clip(np.einsum("ij,ij->i", z - p, e) / np.where(ee > 0, ee, 1.0), 0.0, 1.0)
        cand = p + t[:, None] * e
        d2 = np.sum((cand - z) ** 2, axis=1)
        return cand[int(np.argmin(d2))]

    def translate(self, shift):
        return Polygon(self.vertices + np.asarray(shift, dtype=float), _ordered=True)

    def diameter(self):
        v = self.vertices
        if v.shape[0] == 1:
            return 0.0
        return float(np.max(pdist(v)))

    def exterior_angles(self) -> np.ndarray:
        """Turning angle at each vertex; they sum to 2*pi (pi, pi for a segment)."""
        v = self.vertices
        if v.shape[0] == 1:
            return np.array([2 * np.pi])
        if v.shape[0] == 2:
            return np.array([np.pi, np.pi])
        e_out = np.roll(v, -1, axis=0) - v
        e_in = v - np.roll(v, 1, axis=0)
        cross = e_in[:, 0] * e_out[:, 1] - e_in[:, 1] * e_out[:, 0]
        dot = np.einsum("ij,ij->i", e_in, e_out)
        ang = np.arctan2(cross, dot)
        # a reversal reads as -pi when the cross product is a signed zero
        return np.where(ang < -0.5 * np.pi, ang + 2 * np.pi, ang)


@dataclass(frozen=True)
class PointCloudBody(ConvexBody):
    """Convex hull of finitely many points in R^m (m >= 2, mainly m >= 3)."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 2 or p.shape[0] == 0 or not np.all(np.isfinite(p)):
            raise DegenerateBodyError()
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def support_many(self, dirs):
        dirs = np.atleast_2d(dirs)
        return np.max(dirs @ self.points.T, axis=1)

    def nearest(self, z):
        z = np.asarray(z, dtype=float)
        pts = self.points
        if pts.shape[0] == 1:
            return pts[0].copy()
        # least squares over the simplex via a heavily weighted affine row
        rho = 1e4 * max(1.0, float(np.max(np.abs(pts))))
        a = np.vstack([pts.T, rho * np.ones(pts.shape[0])])
        b = np.concatenate([z, [rho]])
        lam, _ = nnls(a, b, maxiter=50 * pts.shape[0])
        lam = lam / lam.sum()
        return lam @ pts

    def halfspaces(self):
        """Outward facet normals and offsets, ``A z <= b`` (joggled if flat)."""
        try:
            hull = ConvexHull(self.points)
        except QhullError:
            hull = ConvexHull(self.points, qhull_options="QJ")
        eq = hull.equations
        return eq[:, :-1], -eq[:, -1], hull

    def translate(self, shift):
        return PointCloudBody(self.points + np.asarray(shift, dtype=float))

    def diameter(self):
        p = self.points
        return float(np.max(pdist(p))) if p.shape[0] > 1 else 0.0


# ----------------------------------------------------------------------------
# operations


def support(body: ConvexBody, direction) -> float:
    """Support function ``max <direction, z>`` over the body."""
    u = _as_unit(direction)
    if u.size != body.dim:
        raise ValueError("direction has wrong dimension")
    return float(body.support_many(u[None, :])[0])


def distance_to(body: ConvexBody, point) -> float:
    """Euclidean distance from ``point`` to the body; zero on membership."""
    z = np.asarray(point, dtype=float)
    if z.size != body.dim:
        raise ValueError("point has wrong dimension")
    d = float(np.linalg.norm(body.nearest(z) - z))
    return 0.0 if d <= body.tolerance else d


def _disc_points(center, radius, n):
    th = 2 * np.pi * np.arange(n) / n
    return center + radius * np.column_stack([np.cos(th), np.sin(th)])


def _segment_circle_hits(p0, p1, center, radius):
    """Points where segments p0->p1 cross the circle (vectorized, may be empty)."""
    d = p1 - p0
    f = p0 - center
    a = np.einsum("ij,ij->i", d, d)
    b = 2 * np.einsum("ij,ij->i", f, d)
    c = np.einsum("ij,ij->i", f, f) - radius * radius
    disc = b * b - 4 * a * c
    ok = (a > 0) & (disc >= 0)
    out = []
    if np.any(ok):
        sq = np.sqrt(disc[ok])
        for sgn in (-1.0, 1.0):
            t = (-b[ok] + sgn * sq) / (2 * a[ok])
            keep = (t >= 0) & (t <= 1)
            out.append(p0[ok][keep] + t[keep, None] * d[ok][keep])
    if not out:
        return np.empty((0, 2))
    return np.vstack(out)


def polygon_disc_intersection(poly: Polygon, center, radius, n_circle: int = N_POLY) -> Polygon:
    """``poly ∩ B(center, radius)`` as a polygon.

    The boundary of the result consists of polygon vertices inside the disc,
    circle nodes inside the polygon and the exact edge/circle crossings.
    """
    center = np.asarray(center, dtype=float)
    v = poly.vertices
    inside_v = v[np.sum((v - center) ** 2, axis=1) <= radius * radius * (1 + 1e-14)]
    circ = _disc_points(center, radius, n_circle)
    if v.shape[0] >= 3:
        p, e = poly._edges()
        rel = circ[:, None, :] - p[None, :, :]
        cross = e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0]
        inside_c = circ[np.all(cross >= 0, axis=1)]
        hits = _segment_circle_hits(p, p + e, center, radius)
    elif v.shape[0] == 2:
        inside_c = np.empty((0, 2))
        hits = _segment_circle_hits(v[:1], v[1:], center, radius)
    else:
        inside_c = np.empty((0, 2))
        hits = np.empty((0, 2))
    pts = np.vstack([inside_v, inside_c, hits])
    if pts.shape[0] == 0:
        raise DegenerateBodyError("degenerate body: empty intersection")
    return Polygon(pts)


def clamp_intersection(body: ConvexBody, anchor) -> ConvexBody:
    """Return ``K ∩ B(anchor, 2 d(anchor, K))``; the singleton when anchor ∈ K."""
    a = np.asarray(anchor, dtype=float)
    if hasattr(body, "clamp"):
        return body.clamp(a)
    d = distance_to(body, a)
    if d == 0.0:
        return Polygon(a[None, :], _ordered=True) if body.dim == 2 else PointCloudBody(a[None, :])
    r = 2.0 * d
    if isinstance(body, Ball):
        if np.linalg.norm(body.center - a) + body.radius <= r:
            return body
        if body.dim == 2:
            return polygon_disc_intersection(body.to_polygon(), a, r)
        body = PointCloudBody(_sphere_nodes(body.dim, N_SPHERE) * body.radius + body.center)
    if isinstance(body, Polygon):
        return polygon_disc_intersection(body, a, r)
    if isinstance(body, PointCloudBody):
        return _cloud_ball_intersection(body, a, r)
    raise TypeError(f"unsupported body {type(body).__name__}")


def _cloud_ball_intersection(body: PointCloudBody, center, radius, n_sphere: int = N_SPHERE):
    pts = body.points
    keep = [pts[np.sum((pts - center) ** 2, axis=1) <= radius * radius * (1 + 1e-12)]]
    a_mat, b_vec, hull = body.halfspaces()
    sph = center + radius * _sphere_nodes(body.dim, n_sphere)
    keep.append(sph[np.all(sph @ a_mat.T <= b_vec + 1e-12, axis=1)])
    edges = set()
    for simplex in hull.simplices:
        for i in range(len(simplex)):
            for j in range(i + 1, len(simplex)):
                edges.add((min(simplex[i], simplex[j]), max(simplex[i], simplex[j])))
    if edges:
        e = np.array(sorted(edges))
        p0, p1 = hull.points[e[:, 0]], hull.points[e[:, 1]]
        d = p1 - p0
        f = p0 - center
        aa = np.einsum("ij,ij->i", d, d)
        bb = 2 * np.einsum("ij,ij->i", f, d)
        cc = np.einsum("ij,ij->i", f, f) - radius * radius
        disc = bb * bb - 4 * aa * cc
        ok = (aa > 0) & (disc >= 0)
        for sgn in (-1.0, 1.0):
            t = (-bb[ok] + sgn * np.sqrt(disc[ok])) / (2 * aa[ok])
            m = (t >= 0) & (t <= 1)
            keep.append(p0[ok][m] + t[m, None] * d[ok][m])
    allpts = np.vstack(keep)
    if allpts.shape[0] == 0:
        raise DegenerateBodyError("degenerate body: empty intersection")
    return PointCloudBody(allpts)


def _sphere_nodes(m: int, n: int, seed: int = 0) -> np.ndarray:
    """Deterministic, nearly uniform nodes on the unit sphere S^{m-1}."""
    if m == 2:
        th = 2 * np.pi * (np.arange(n) + 0.5) / n
        return np.column_stack([np.cos(th), np.sin(th)])
    if m == 3:
        k = np.arange(n) + 0.5
        z = 1 - 2 * k / n
        phi = np.pi * (1 + math.sqrt(5.0)) * k
        rho = np.sqrt(1 - z * z)
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    from scipy.special import ndtri

    u = qmc.Sobol(d=m, scramble=True, seed=seed).random(n)
    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _steiner_by_quadrature(body: ConvexBody, n0: int, tol: float) -> tuple[np.ndarray, int]:
    m = body.dim
    n = n0
    prev = None
    limit = N_SPHERE_MAX if m == 2 else 1 << 17
    while n <= limit:
        u = _sphere_nodes(m, n)
        # antithetic pairing cancels the translation part exactly
        sig = body.support_many(u) - body.support_many(-u)
        est = m * np.mean(u * (0.5 * sig)[:, None], axis=0)
        if prev is not None and np.linalg.norm(est - prev) <= tol:
            return est, n
        prev = est
        n *= 2
    raise QuadratureError(f"Steiner quadrature did not reach {tol:g} with {limit} nodes")


def steiner_point(body: ConvexBody, n_sphere: int = N_SPHERE, tol: float | None = None) -> np.ndarray:
    """Steiner point ``m ∫ u σ(K, u) dμ(u)`` of a compact convex body.

    Polygons use the exact vertex formula (each vertex weighted by its
    exterior angle over 2*pi); balls return their center; anything else
    falls back to sphere quadrature with node doubling until successive
    estimates agree to ``tol``.
    """
    if isinstance(body, Ball):
        return body.center.copy()
    if isinstance(body, Polygon):
        w = body.exterior_angles()
        return (w / w.sum()) @ body.vertices
    if isinstance(body, PointCloudBody) and body.points.shape[0] == 1:
        return body.points[0].copy()
    if tol is None:
        tol = EPS_STEINER if body.dim == 2 else 1e-3 * max(body.diameter(), 1.0)
    est, _ = _steiner_by_quadrature(body, n_sphere, tol)
    return est


def steiner_point_quadrature(body: ConvexBody, n_nodes: int) -> np.ndarray:
    """Plain sphere-quadrature Steiner point with a fixed node count."""
    u = _sphere_nodes(body.dim, n_nodes)
    sig = body.support_many(u) - body.support_many(-u)
    return body.dim * np.mean(u * (0.5 * sig)[:, None], axis=0)


def hausdorff(a: ConvexBody, b: ConvexBody, n_dirs: int = 8 * N_POLY) -> float:
    """Hausdorff distance between compact convex bodies.

    Exact for polygon pairs (the farthest point is a vertex) and for ball
    pairs. Otherwise uses ``max_u |σ_a(u) - σ_b(u)|`` on sampled directions.
    """
    if a.dim != b.dim:
        raise ValueError("bodies live in different dimensions")
    if isinstance(a, Ball) and isinstance(b, Ball):
        return float(np.linalg.norm(a.center - b.center) + abs(a.radius - b.radius))
    if isinstance(a, Polygon) and isinstance(b, Polygon):
        return max(_one_sided(a, b), _one_sided(b, a))
    u = _sphere_nodes(a.dim, n_dirs)
    return float(np.max(np.abs(a.support_many(u) - b.support_many(u))))


def _one_sided(src: Polygon, dst: Polygon) -> float:
    v = src.vertices
    if dst.vertices.shape[0] >= 3:
        p, e = dst._edges()
        rel = v[:, None, :] - p[None, :, :]
        cross = e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0]
        outside = ~np.all(cross >= 0, axis=1)
    else:
        p, e = dst._edges()
        outside = np.ones(v.shape[0], dtype=bool)
    if not np.any(outside):
        return 0.0
    w = v[outside]
    ee = np.einsum("ij,ij->i", e, e)
    rel = w[:, None, :] - p[None, :, :]
    t = np.einsum("kij,ij->ki", rel, e) / np.where(ee > 0, ee, 1.0)
    t = np.clip(t, 0.0, 1.0)
    cand = p[None, :, :] + t[..., None] * e[None, :, :]
    d2 = np.sum((cand - w[:, None, :]) ** 2, axis=-1)
    return float(np.sqrt(np.max(np.min(d2, axis=1))))
