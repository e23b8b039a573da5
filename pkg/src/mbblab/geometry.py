"""Convex hull C of a support, its relative interior I, and point classification."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .measures import DiscreteMeasure

TAU_GEOM = 1e-9


class Position(enum.Enum):
    INTERIOR = "INTERIOR"
    BOUNDARY = "BOUNDARY"
    EXTERIOR = "EXTERIOR"


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def monotone_chain(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull vertices of 2D points, collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float))))
    if len(pts) <= 2:
        return np.array(pts)
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


@dataclass(frozen=True)
class GeometrySummary:
    """Hull of a finite support, expressed in its affine hull.

    ``origin + coords @ basis`` maps affine coordinates back to R^d; the hull
    in affine coordinates is an interval (dim 1), a polygon (dim 2) or a point.
    """

    dim: int
    dim_affine_hull: int
    hull_vertices: np.ndarray
    origin: np.ndarray
    basis: np.ndarray  # shape (dim_affine_hull, dim)
    tol: float = TAU_GEOM

    # -- affine coordinates -------------------------------------------------
    def _split(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        rel = p - self.origin
        coords = rel @ self.basis.T
        off = np.linalg.norm(rel - coords @ self.basis, axis=1)
        return coords, off

    def _hull_coords(self):
        return (self.hull_vertices - self.origin) @ self.basis.T

    def depth(self, p) -> np.ndarray:
        """Signed distance to the relative boundary: > 0 inside I, < 0 outside C."""
        coords, off = self._split(p)
        k = self.dim_affine_hull
        if k == 0:
            return np.where(off <= self.tol, np.inf, -off)
        hull = self._hull_coords()
        if k == 1:
            lo, hi = hull[:, 0].min(), hull[:, 0].max()
            t = coords[:, 0]
            inside = np.minimum(t - lo, hi - t)
            out = np.maximum(np.maximum(lo - t, t - hi), 0.0)
        else:
            inside, out = _polygon_depth(hull, coords)
        res = np.where(inside >= 0, inside, -out)
        return np.where(off > self.tol, -np.hypot(off, np.maximum(-res, 0.0)), res)

    def classify(self, p) -> list[Position]:
        coords, off = self._split(p)
        dep = self.depth(p)
        out = []
        for d_, o in zip(np.atleast_1d(dep), np.atleast_1d(off)):
            if self.dim_affine_hull == 0:
                out.append(Position.INTERIOR if o <= self.tol else Position.EXTERIOR)
            elif o > self.tol or d_ < -self.tol:
                out.append(Position.EXTERIOR)
            elif d_ <= self.tol:
                out.append(Position.BOUNDARY)
            else:
                out.append(Position.INTERIOR)
        return out

    def classify_one(self, p) -> Position:
        return self.classify(p)[0]

    def diameter(self) -> float:
        v = self.hull_vertices
        if len(v) < 2:
            return 0.0
        return float(np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=2)))

    def edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Relative-boundary faces of dimension k-1 (endpoints for k=1, edges for k=2)."""
        v = self.hull_vertices
        if self.dim_affine_hull == 2:
            return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]
        return []

    def lattice(self, divisions: int = 16) -> np.ndarray:
        """Grid points of C at resolution ``diameter / divisions`` (boundary included)."""
        k = self.dim_affine_hull
        if k == 0:
            return self.hull_vertices.copy()
        hull = self._hull_coords()
        h = self.diameter() / divisions
        lo, hi = hull.min(axis=0), hull.max(axis=0)
        axes = [np.arange(lo[i], hi[i] + 0.5 * h, h) for i in range(k)]
        axes = [np.append(a[a < hi[i] - 1e-12], hi[i]) for i, a in enumerate(axes)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        pts = self.origin + grid @ self.basis
        keep = self.depth(pts) >= -self.tol
        return pts[keep]

    def outside_points(self, distance: float) -> np.ndarray:
        """Points at the given distance outside C, one per boundary face and vertex."""
        k = self.dim_affine_hull
        v = self.hull_vertices
        if k == 0:
            out = [v[0] + distance * e for e in np.eye(self.dim)]
            return np.array(out)
        cen = v.mean(axis=0)
        pts = []
        for p in v:
            u = p - cen
            pts.append(p + distance * u / np.linalg.norm(u))
        for a, b in self.edges():
            mid = 0.5 * (a + b)
            u = mid - cen
            pts.append(mid + distance * u / np.linalg.norm(u))
        if self.dim == 2 and k == 1:
            normal = np.array([-self.basis[0, 1], self.basis[0, 0]])
            pts.append(cen + distance * normal)
        return np.array(pts)


def _polygon_depth(hull: np.ndarray, q: np.ndarray):
    n = len(hull)
    nxt = np.roll(hull, -1, axis=0)
    e = nxt - hull
    normals = np.column_stack([e[:, 1], -e[:, 0]])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    s = np.einsum("qnk,nk->qn", q[:, None, :] - hull[None, :, :], normals)
    inside = -s.max(axis=1)
    # exact distance to the polygon for outside points: min over segments
    seg = np.empty((len(q), n))
    for i in range(n):
        a, d = hull[i], e[i]
        t = np.clip(((q - a) @ d) / (d @ d), 0.0, 1.0)
        seg[:, i] = np.linalg.norm(q - (a + t[:, None] * d), axis=1)
    out = seg.min(axis=1)
    return inside, out


def hull_geometry(nu: DiscreteMeasure, tol: float = TAU_GEOM) -> GeometrySummary:
    pts = nu.points
    d = nu.dim
    origin = pts.mean(axis=0)
    centered = pts - origin
    scale = max(1.0, float(np.abs(pts).max()))
    if d == 1:
        lo, hi = pts[:, 0].min(), pts[:, 0].max()
        if hi - lo <= 1e-12 * scale:
            return GeometrySummary(1, 0, pts[:1].copy(), pts[0].copy(), np.zeros((0, 1)), tol)
        return GeometrySummary(1, 1, np.array([[lo], [hi]]), np.zeros(1), np.eye(1), tol)
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(sv > 1e-12 * scale * np.sqrt(len(pts))))
    if rank == 0:
        return GeometrySummary(2, 0, pts[:1].copy(), pts[0].copy(), np.zeros((0, 2)), tol)
    if rank == 1:
        u = vt[0]
        # canonical orientation of the line direction
        if u[0] < 0 or (u[0] == 0 and u[1] < 0):
            u = -u
        t = centered @ u
        ends = np.array([pts[np.argmin(t)], pts[np.argmax(t)]])
        return GeometrySummary(2, 1, ends, origin, u[None, :], tol)
    verts = monotone_chain(pts)
    return GeometrySummary(2, 2, verts, np.zeros(2), np.eye(2), tol)


def compactly_contained(mu: DiscreteMeasure, geo: GeometrySummary) -> bool:
    """Every atom of ``mu`` lies in I at distance > tol from the relative boundary."""
    dep = geo.depth(mu.points)
    return bool(np.all(dep > geo.tol)) and all(
        c is Position.INTERIOR for c in geo.classify(mu.points))
