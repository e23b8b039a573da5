"""Finitely supported probability measures on R^d (d = 1 or 2)."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm

WEIGHT_SUM_TOL = 1e-12


class MeasureError(ValueError):
    pass


class DiscreteMeasure:
    """Probability measure with finitely many atoms.

    ``points`` has shape ``(n, d)`` and ``weights`` shape ``(n,)``.  Instances are
    treated as immutable: the arrays are made read-only on construction.
    """

    __slots__ = ("points", "weights")

    def __init__(self, points, weights):
        pts = np.array(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(weights, dtype=float).ravel()
        if pts.ndim != 2 or pts.shape[0] != w.size:
            raise MeasureError(f"{pts.shape[0] if pts.ndim else 0} points but {w.size} weights")
        if w.size == 0:
            raise MeasureError("a measure needs at least one atom")
        if pts.shape[1] not in (1, 2):
            raise MeasureError(f"dimension {pts.shape[1]} not supported (d must be 1 or 2)")
        if not np.all(np.isfinite(pts)):
            raise MeasureError("non-finite atom coordinates")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise MeasureError("weights must be finite and strictly positive")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise MeasureError(f"weights sum to {w.sum():.17g}, not 1")
        if len({tuple(p) for p in pts}) != len(pts):
            raise MeasureError("atom points must be pairwise distinct")
        pts.setflags(write=False)
        w.setflags(write=False)
        self.points = pts
        self.weights = w

    @classmethod
    def build(cls, points, weights, *, renormalize: bool = True, prune: float = 0.0):
        """Tolerant constructor: merges duplicate points, drops weights ``<= prune``.

        Negative round-off weights (from LP output) are treated like zeros.
        """
        pts = np.array(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(weights, dtype=float).ravel()
        if pts.shape[0] != w.size:
            raise MeasureError(f"{pts.shape[0]} points but {w.size} weights")
        keep = w > prune
        pts, w = pts[keep], w[keep]
        if w.size == 0:
            raise MeasureError("no atom with positive weight")
        uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
        merged = np.zeros(len(uniq))
        np.add.at(merged, inverse.ravel(), w)
        if renormalize:
            merged = merged / merged.sum()
        return cls(uniq, merged)

    @classmethod
    def dirac(cls, x):
        return cls(np.atleast_1d(np.asarray(x, dtype=float))[None, :], [1.0])

    @classmethod
    def uniform(cls, points):
        pts = np.array(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.weights.size

    def __len__(self):
        return self.size

    def __repr__(self):
        atoms = ", ".join(f"{w:.4g}@{tuple(np.round(p, 4))}" for p, w in
                          zip(self.points[:6], self.weights[:6]))
        more = ", ..." if self.size > 6 else ""
        return f"DiscreteMeasure(d={self.dim}, [{atoms}{more}])"

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights))

    def __hash__(self):
        return hash((self.points.tobytes(), self.weights.tobytes()))

    def barycenter(self) -> np.ndarray:
        # correctly rounded sums, so symmetric atoms cancel exactly
        prod = self.weights[:, None] * self.points
        return np.array([math.fsum(prod[:, k]) for k in range(self.dim)])

    def second_moment(self) -> float:
        return float(self.weights @ np.sum(self.points ** 2, axis=1))

    def index_of(self, x, tol: float = 0.0) -> int:
        """Index of the atom at ``x`` (within ``tol`` in sup norm); -1 if absent."""
        d = np.max(np.abs(self.points - np.asarray(x, dtype=float)), axis=1)
        i = int(np.argmin(d))
        return i if d[i] <= tol else -1

    def restrict(self, mask) -> "DiscreteMeasure":
        """Conditional law ``m(B ∩ .)/m(B)`` for the atoms selected by ``mask``."""
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise MeasureError("restriction to a null set")
        w = self.weights[mask]
        return DiscreteMeasure(self.points[mask], w / w.sum())

    def integrate(self, f_values) -> float:
        return float(self.weights @ np.asarray(f_values, dtype=float))

    def sign_flip(self) -> "DiscreteMeasure":
        return DiscreteMeasure.build(-self.points, self.weights, renormalize=False)


def barycenter(m: DiscreteMeasure) -> np.ndarray:
    return m.barycenter()


def second_moment(m: DiscreteMeasure) -> float:
    return m.second_moment()


def _gaussian_cells_1d(n: int) -> np.ndarray:
    # conditional means of N(0,1) on the n equal-probability quantile cells
    edges = norm.ppf(np.arange(n + 1) / n)
    dens = norm.pdf(edges)
    pts = n * (dens[:-1] - dens[1:])
    half = n // 2
    # exact antisymmetry; the middle cell of odd n is centered at 0
    pts[n - half:] = -pts[:half][::-1]
    if n % 2:
        pts[half] = 0.0
    return pts


def quantize_gaussian(d: int, n: int) -> DiscreteMeasure:
    """Equal-weight quantization of the standard Gaussian on R^d.

    Atoms are the conditional means of the equal-probability quantile cells
    (so the barycenter is exactly zero and the output is dominated by the
    Gaussian in convex order).  In d = 2 the grid is the product of two 1D
    grids with ``sqrt(n)`` atoms each.
    """
    if d not in (1, 2):
        raise MeasureError(f"quantize_gaussian supports d in {{1, 2}}, got {d}")
    if n < 2:
        raise MeasureError("need at least two quantization points")
    if d == 1:
        pts = _gaussian_cells_1d(n)[:, None]
        return DiscreteMeasure(pts, np.full(n, 1.0 / n))
    k = math.isqrt(n)
    if k * k != n:
        raise MeasureError(f"n={n} is not a perfect square (required for d=2)")
    axis = _gaussian_cells_1d(k)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return DiscreteMeasure(pts, np.full(n, 1.0 / n))
