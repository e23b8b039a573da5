"""Finite max-affine convex functions, lower convex envelopes and affine normalization."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull, QhullError

ACTIVE_TOL = 1e-9


class ConvexPL:
    """``psi(y) = max_k (<a_k, y> + b_k)`` with slopes ``a`` (K, d) and intercepts ``b`` (K,)."""

    __slots__ = ("slopes", "intercepts")

    def __init__(self, slopes, intercepts):
        a = np.array(slopes, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        b = np.array(intercepts, dtype=float).ravel()
        if a.shape[0] != b.size or b.size == 0:
            raise ValueError("need a nonempty, matching list of slopes and intercepts")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite affine piece")
        a.setflags(write=False)
        b.setflags(write=False)
        self.slopes = a
        self.intercepts = b

    @classmethod
    def affine(cls, slope, intercept: float = 0.0) -> "ConvexPL":
        return cls(np.atleast_1d(np.asarray(slope, dtype=float))[None, :], [intercept])

    @classmethod
    def zero(cls, d: int) -> "ConvexPL":
        return cls(np.zeros((1, d)), [0.0])

    @property
    def dim(self) -> int:
        return self.slopes.shape[1]

    @property
    def n_pieces(self) -> int:
        return self.intercepts.size

    def __repr__(self):
        return f"ConvexPL(d={self.dim}, pieces={self.n_pieces})"

    def pieces_at(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if y.shape[1] != self.dim and y.shape[0] == self.dim and self.dim > 1:
            y = y.T
        return y @ self.slopes.T + self.intercepts

    def __call__(self, y) -> np.ndarray:
        """Values at the rows of ``y`` (shape (n, d), or a single point)."""
        return self.pieces_at(y).max(axis=1)

    def value(self, y) -> float:
        return float(self(np.atleast_2d(y))[0])

    def active(self, y, tol: float = ACTIVE_TOL) -> np.ndarray:
        """Indices of the pieces attaining the max at a single point ``y``."""
        v = self.pieces_at(np.atleast_2d(y))[0]
        top = v.max()
        return np.flatnonzero(v >= top - tol * (1.0 + abs(top)))

    def __add__(self, other):
        if isinstance(other, ConvexPL):
            a = (self.slopes[:, None, :] + other.slopes[None, :, :]).reshape(-1, self.dim)
            b = (self.intercepts[:, None] + other.intercepts[None, :]).ravel()
            return ConvexPL(*_dedupe(a, b))
        return ConvexPL(self.slopes, self.intercepts + float(other))

    __radd__ = __add__

    def __sub__(self, c):
        return ConvexPL(self.slopes, self.intercepts - float(c))

    def scale(self, t: float) -> "ConvexPL":
        if t < 0:
            raise ValueError("negative multiples of a convex function are not convex")
        return ConvexPL(t * self.slopes, t * self.intercepts)

    def add_affine(self, slope, intercept: float = 0.0) -> "ConvexPL":
        s = np.asarray(slope, dtype=float).reshape(1, -1)
        return ConvexPL(self.slopes + s, self.intercepts + intercept)

    def prune(self, grid) -> "ConvexPL":
        """Drop pieces that are never active on ``grid`` (values on the grid unchanged)."""
        vals = self.pieces_at(grid)
        top = vals.max(axis=1, keepdims=True)
        keep = np.any(vals >= top - 1e-12 * (1.0 + np.abs(top)), axis=0)
        return ConvexPL(self.slopes[keep], self.intercepts[keep])


def _dedupe(a, b):
    key = np.round(np.column_stack([a, b]), 12)
    _, idx = np.unique(key, axis=0, return_index=True)
    idx = np.sort(idx)
    return a[idx], b[idx]


def _lower_hull_1d(t: np.ndarray, v: np.ndarray):
    order = np.lexsort((v, t))
    t, v = t[order], v[order]
    # keep the lowest value at repeated abscissae
    first = np.concatenate([[True], np.diff(t) > 0])
    t, v = t[first], v[first]
    hull: list[int] = []
    for i in range(len(t)):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            cross = (t[i1] - t[i0]) * (v[i] - v[i0]) - (v[i1] - v[i0]) * (t[i] - t[i0])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return t[hull], v[hull]


def _envelope_1d(t: np.ndarray, v: np.ndarray):
    ht, hv = _lower_hull_1d(t, v)
    if len(ht) == 1:
        return np.zeros((1, 1)), np.array([hv[0]])
    slopes = np.diff(hv) / np.diff(ht)
    inter = hv[:-1] - slopes * ht[:-1]
    return slopes[:, None], inter


def envelope(points, values) -> ConvexPL:
    """Lower convex envelope of the graph points ``(y_i, v_i)`` as a max-affine function.

    In d = 1 the pieces are the segments of the convex minorant; in d = 2 they
    are the lower facets of the 3D hull of the lifted points.  Grids whose
    affine hull is lower-dimensional are handled in that affine hull.
    """
    y = np.asarray(points, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    v = np.asarray(values, dtype=float).ravel()
    if y.shape[0] != v.size or v.size == 0:
        raise ValueError("points and values must match and be nonempty")
    d = y.shape[1]
    if d == 1:
        return ConvexPL(*_envelope_1d(y[:, 0], v))
    origin = y.mean(axis=0)
    _, sv, vt = np.linalg.svd(y - origin, full_matrices=False)
    scale = max(1.0, float(np.abs(y).max()))
    rank = int(np.sum(sv > 1e-12 * scale * np.sqrt(len(y))))
    if rank == 0:
        return ConvexPL(np.zeros((1, d)), [v.min()])
    if rank == 1:
        u = vt[0]
        a1, b1 = _envelope_1d((y - origin) @ u, v)
        # lift: alpha * <u, y - origin> + beta
        return ConvexPL(a1 * u[None, :], b1 - a1[:, 0] * (origin @ u))
    return ConvexPL(*_envelope_2d(y, v))


def _envelope_2d(y, v):
    lifted = np.column_stack([y, v])
    vscale = max(1.0, float(np.abs(v).max()))
    # an exactly planar lift has no 3D hull: the envelope is that plane
    design = np.column_stack([y, np.ones(len(y))])
    coef, *_ = np.linalg.lstsq(design, v, rcond=None)
    if np.max(np.abs(design @ coef - v)) <= 1e-12 * vscale:
        return coef[None, :2], coef[2:3]
    try:
        hull = ConvexHull(lifted)
    except QhullError:
        hull = ConvexHull(lifted, qhull_options="Qt Qbb")
    eq = hull.equations  # n . p + off <= 0 inside, with unit normal n
    lower = eq[:, 2] < -1e-12
    n, off = eq[lower, :3], eq[lower, 3]
    # plane n0 y0 + n1 y1 + n2 v + off = 0  ->  v = -(n0 y0 + n1 y1 + off) / n2
    a = -n[:, :2] / n[:, 2:3]
    b = -off / n[:, 2]
    a, b = _dedupe(a, b)
    # drop near-vertical facets that only matter at the hull boundary
    keep = np.ones(len(b), dtype=bool)
    vals = y @ a.T + b
    keep &= np.all(vals <= v[:, None] + 1e-9 * vscale, axis=0)
    if not keep.any():
        keep[:] = True
    return a[keep], b[keep]


def subgradient_centroid(psi: ConvexPL, anchor, tol: float = ACTIVE_TOL) -> np.ndarray:
    """Centroid of the subdifferential of ``psi`` at ``anchor``.

    The subdifferential of a max-affine function is the convex hull of the
    active slopes; its centroid (midpoint in 1D, area centroid in 2D) moves
    with the function under addition of affine maps.
    """
    s = psi.slopes[psi.active(anchor, tol)]
    s = np.unique(np.round(s, 12), axis=0)
    if len(s) == 1:
        return s[0].copy()
    if s.shape[1] == 1:
        return np.array([0.5 * (s.min() + s.max())])
    c = s.mean(axis=0)
    _, sv, vt = np.linalg.svd(s - c, full_matrices=False)
    if sv[1] <= 1e-12 * max(1.0, sv[0]):
        t = (s - c) @ vt[0]
        return c + 0.5 * (t.min() + t.max()) * vt[0]
    from .geometry import monotone_chain

    poly = monotone_chain(s)
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    area = cr.sum() / 2.0
    return np.array([((x + xn) * cr).sum(), ((y + yn) * cr).sum()]) / (6.0 * area)


def normalize_affine(psi: ConvexPL, anchor, tol: float = ACTIVE_TOL) -> ConvexPL:
    """Subtract the supporting affine function at ``anchor`` whose slope is the
    subdifferential centroid; the result is ``>= 0`` and vanishes at ``anchor``."""
    anchor = np.atleast_1d(np.asarray(anchor, dtype=float))
    s = subgradient_centroid(psi, anchor, tol)
    val = psi.value(anchor)
    return psi.add_affine(-s, -(val - s @ anchor))
