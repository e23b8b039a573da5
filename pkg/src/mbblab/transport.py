"""Couplings, martingale transports, maximal covariance and W2.

``mcov(p, q) = sup over couplings of E<X, Y>``; it is tied to the squared
Wasserstein distance by ``sm(p) - 2 mcov(p, q) + sm(q) = W2^2(p, q)``, and both
sides are computed independently here so the identity can be tested.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from . import lp
from .lp import TAU_LP, LinearProgram, Sense
from .measures import DiscreteMeasure, MeasureError


class ConvexOrderError(ValueError):
    """Raised when an operation needs ``mu <=_c nu`` and the LP proves otherwise."""

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


@dataclass(frozen=True)
class Coupling:
    row_measure: DiscreteMeasure
    col_measure: DiscreteMeasure
    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if m.shape != (self.row_measure.size, self.col_measure.size):
            raise MeasureError(f"mass matrix shape {m.shape} does not match marginals")
        if np.any(m < -TAU_LP):
            raise MeasureError("negative coupling mass")
        m = np.maximum(m, 0.0)
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    def marginal_errors(self) -> tuple[float, float]:
        r = np.abs(self.mass.sum(axis=1) - self.row_measure.weights).max()
        c = np.abs(self.mass.sum(axis=0) - self.col_measure.weights).max()
        return float(r), float(c)

    def is_valid(self, tol: float = TAU_LP) -> bool:
        return max(self.marginal_errors()) <= tol

    @property
    def kernel(self) -> np.ndarray:
        """Row-normalized mass: row ``i`` is the conditional law given row atom ``i``."""
        rows = self.mass.sum(axis=1, keepdims=True)
        return np.divide(self.mass, rows, out=np.zeros_like(self.mass), where=rows > 0)

    def conditional(self, i: int) -> DiscreteMeasure:
        return DiscreteMeasure.build(self.col_measure.points, self.kernel[i], prune=0.0)

    def integrate(self, f) -> float:
        """``sum_ij mass_ij f(x_i, y_j)`` for a cost matrix ``f``."""
        return float(np.sum(self.mass * f))


class MartingaleTransport(Coupling):
    """Coupling whose conditional laws have barycenter equal to the row atom."""

    def martingale_error(self) -> float:
        k = self.kernel
        means = k @ self.col_measure.points
        charged = self.mass.sum(axis=1) > 0
        dev = np.linalg.norm(means - self.row_measure.points, axis=1)
        return float(dev[charged].max(initial=0.0))

    def is_valid(self, tol: float = TAU_LP) -> bool:
        return super().is_valid(tol) and self.martingale_error() <= tol

    @classmethod
    def identity(cls, m: DiscreteMeasure) -> "MartingaleTransport":
        return cls(m, m, np.diag(m.weights))

    @classmethod
    def from_kernel(cls, mu: DiscreteMeasure, nu: DiscreteMeasure, kernel) -> "MartingaleTransport":
        return cls(mu, nu, mu.weights[:, None] * np.asarray(kernel, dtype=float))


def polish_martingale(pi: MartingaleTransport) -> MartingaleTransport:
    """Remove LP round-off from the conditional means.

    Each kernel row ``k`` is replaced by ``k_j (1 + a + b (y_j - x))`` with
    ``(a, b)`` the two-variable correction making the row sum 1 and the mean
    exactly ``x``.  Rows where that would create negative mass are left alone.
    """
    k = pi.kernel.copy()
    y = pi.col_measure.points
    for i, x in enumerate(pi.row_measure.points):
        row = k[i]
        if row.sum() <= 0:
            continue
        rel = y - x
        # solve for (a, b): sum k(1+a+b.rel) = 1, sum k(1+a+b.rel) rel = 0
        d = rel.shape[1]
        M = np.zeros((d + 1, d + 1))
        rhs = np.zeros(d + 1)
        feats = np.column_stack([np.ones(len(row)), rel])
        M = (feats * row[:, None]).T @ feats
        rhs[0] = 1.0 - row.sum()
        rhs[1:] = -(row @ rel)
        try:
            coef = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            continue
        new = row * (1.0 + feats @ coef)
        if np.all(new >= 0):
            k[i] = new
    return MartingaleTransport.from_kernel(pi.row_measure, pi.col_measure, k)


# ---------------------------------------------------------------------------
# LP builders


def coupling_constraints(p: DiscreteMeasure, q: DiscreteMeasure):
    """Sparse marginal constraints for variables ``pi[i, j]`` flattened row-major."""
    n1, n2 = p.size, q.size
    rows_r = np.repeat(np.arange(n1), n2)
    rows_c = n1 + np.tile(np.arange(n2), n1)
    cols = np.arange(n1 * n2)
    A = sp.csr_matrix((np.ones(2 * n1 * n2), (np.concatenate([rows_r, rows_c]),
                                               np.concatenate([cols, cols]))),
                      shape=(n1 + n2, n1 * n2))
    b = np.concatenate([p.weights, q.weights])
    return A, b


def martingale_constraints(mu: DiscreteMeasure, nu: DiscreteMeasure):
    """Marginals plus ``sum_j pi[i, j] (y_j - x_i) = 0`` for each row atom."""
    A, b = coupling_constraints(mu, nu)
    n1, n2, d = mu.size, nu.size, mu.dim
    diff = nu.points[None, :, :] - mu.points[:, None, :]  # (n1, n2, d)
    rows = (np.arange(n1)[:, None, None] * d + np.arange(d)[None, None, :])
    rows = np.broadcast_to(rows, (n1, n2, d))
    cols = np.broadcast_to((np.arange(n1)[:, None] * n2 + np.arange(n2)[None, :])[:, :, None],
                           (n1, n2, d))
    M = sp.csr_matrix((diff.ravel(), (rows.ravel(), cols.ravel())), shape=(n1 * d, n1 * n2))
    return sp.vstack([A, M]).tocsr(), np.concatenate([b, np.zeros(n1 * d)])


def _check_dims(p, q):
    if p.dim != q.dim:
        raise MeasureError(f"dimension mismatch: {p.dim} vs {q.dim}")


@dataclass(frozen=True)
class ConvexOrderResult:
    in_order: bool
    witness: MartingaleTransport | None = None
    certificate: np.ndarray | None = None

    def __bool__(self):
        return self.in_order

    def summary(self) -> str:
        if self.in_order:
            return "convex order holds (martingale transport found)"
        c = self.certificate
        return (f"not in convex order: Farkas certificate with {np.count_nonzero(c)} "
                f"nonzero multipliers, max |y| = {np.abs(c).max():.3g}")


def check_convex_order(mu: DiscreteMeasure, nu: DiscreteMeasure, backend=None) -> ConvexOrderResult:
    """Decide ``mu <=_c nu`` by feasibility of the martingale transport LP."""
    _check_dims(mu, nu)
    A, b = martingale_constraints(mu, nu)
    ok, vec = lp.check_feasible(LinearProgram(np.zeros(A.shape[1]), A, b), backend)
    if not ok:
        return ConvexOrderResult(False, certificate=vec)
    pi = MartingaleTransport(mu, nu, vec.reshape(mu.size, nu.size))
    return ConvexOrderResult(True, witness=pi)


def convex_order_1d(alpha: DiscreteMeasure, beta: DiscreteMeasure, tol: float = TAU_LP) -> bool:
    """1D test through potential functions ``u(K) = E|X - K|`` at all kinks.

    Equivalent to the LP test on the real line; cheap for large supports.
    """
    if alpha.dim != 1 or beta.dim != 1:
        raise MeasureError("convex_order_1d needs d = 1")
    if abs(alpha.barycenter()[0] - beta.barycenter()[0]) > tol:
        return False
    knots = np.union1d(alpha.points[:, 0], beta.points[:, 0])
    ua = np.abs(alpha.points[:, 0][None, :] - knots[:, None]) @ alpha.weights
    ub = np.abs(beta.points[:, 0][None, :] - knots[:, None]) @ beta.weights
    return bool(np.all(ua <= ub + tol))


# ---------------------------------------------------------------------------
# maximal covariance and W2


def mcov(p: DiscreteMeasure, q: DiscreteMeasure, backend=None) -> tuple[float, Coupling]:
    """Maximal covariance by the transport LP; returns the value and an optimal coupling."""
    _check_dims(p, q)
    A, b = coupling_constraints(p, q)
    c = (p.points @ q.points.T).ravel()
    sol = lp.solve(LinearProgram(c, A, b, Sense.MAX), backend)
    if not sol.optimal:
        raise lp.LPError(f"mcov LP ended with status {sol.status.value}")
    return sol.objective_value, Coupling(p, q, sol.primal.reshape(p.size, q.size))


def comonotone_coupling_1d(p: DiscreteMeasure, q: DiscreteMeasure) -> Coupling:
    """Quantile (north-west corner) coupling of two measures on the line."""
    if p.dim != 1 or q.dim != 1:
        raise MeasureError("comonotone coupling needs d = 1")
    ip = np.argsort(p.points[:, 0], kind="stable")
    iq = np.argsort(q.points[:, 0], kind="stable")
    wp, wq = p.weights[ip].copy(), q.weights[iq].copy()
    mass = np.zeros((p.size, q.size))
    i = j = 0
    while i < len(wp) and j < len(wq):
        t = min(wp[i], wq[j])
        mass[ip[i], iq[j]] += t
        wp[i] -= t
        wq[j] -= t
        if wp[i] <= 1e-15 and i < len(wp) - 1:
            i += 1
        elif wq[j] <= 1e-15 and j < len(wq) - 1:
            j += 1
        elif wp[i] <= 1e-15 and wq[j] <= 1e-15:
            break
        elif i == len(wp) - 1 and j == len(wq) - 1:
            mass[ip[i], iq[j]] += min(wp[i], wq[j])
            break
    return Coupling(p, q, mass)


def mcov_1d(p: DiscreteMeasure, q: DiscreteMeasure) -> float:
    """Maximal covariance on the line via sorted quantile pairing."""
    if p.dim != 1 or q.dim != 1:
        raise MeasureError("mcov_1d needs d = 1")
    xs = np.sort(p.points[:, 0])
    ys = np.sort(q.points[:, 0])
    wx = p.weights[np.argsort(p.points[:, 0], kind="stable")]
    wy = q.weights[np.argsort(q.points[:, 0], kind="stable")]
    cx, cy = np.cumsum(wx), np.cumsum(wy)
    cx[-1] = cy[-1] = 1.0
    levels = np.union1d(cx, cy)
    lengths = np.diff(np.concatenate([[0.0], levels]))
    ix = np.minimum(np.searchsorted(cx, levels - 0.5 * lengths), len(xs) - 1)
    iy = np.minimum(np.searchsorted(cy, levels - 0.5 * lengths), len(ys) - 1)
    return float(np.sum(lengths * xs[ix] * ys[iy]))


class W2Result(NamedTuple):
    via_lp: float
    via_mcov: float

    @property
    def discrepancy(self) -> float:
        return abs(self.via_lp - self.via_mcov)


def w2sq(p: DiscreteMeasure, q: DiscreteMeasure, backend=None) -> W2Result:
    """Squared W2 from the cost-``|x-y|^2`` LP and from ``sm - 2 mcov + sm``."""
    _check_dims(p, q)
    A, b = coupling_constraints(p, q)
    cost = np.sum((p.points[:, None, :] - q.points[None, :, :]) ** 2, axis=2).ravel()
    sol = lp.solve(LinearProgram(cost, A, b, Sense.MIN), backend)
    if not sol.optimal:
        raise lp.LPError(f"W2 LP ended with status {sol.status.value}")
    value, _ = mcov(p, q, backend)
    return W2Result(sol.objective_value, p.second_moment() - 2 * value + q.second_moment())


def w2_1d(p: DiscreteMeasure, q: DiscreteMeasure) -> float:
    """W2 distance (not squared) on the line through the quantile identity."""
    val = p.second_moment() - 2 * mcov_1d(p, q) + q.second_moment()
    return float(np.sqrt(max(val, 0.0)))


# ---------------------------------------------------------------------------
# Strassen triple and the mcov chain


@dataclass(frozen=True)
class TripleLaw:
    """Law of ``(A, B, Z)`` on the product of three finite supports."""

    alpha: DiscreteMeasure
    beta: DiscreteMeasure
    zeta: DiscreteMeasure
    weights: np.ndarray  # (n_alpha, n_beta, n_zeta)

    def marginal_ab(self) -> np.ndarray:
        return self.weights.sum(axis=2)

    def marginal_az(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def conditional_mean_b(self) -> np.ndarray:
        """``E[B | A=a, Z=z]`` for every (a, z); NaN where (a, z) is uncharged."""
        mass = self.weights.sum(axis=1)
        num = np.einsum("abz,bk->azk", self.weights, self.beta.points)
        with np.errstate(invalid="ignore", divide="ignore"):
            return num / mass[:, :, None]

    def martingale_deviation(self) -> float:
        """``max |E[B | A, Z] - A|`` over charged (a, z)."""
        cm = self.conditional_mean_b()
        mass = self.weights.sum(axis=1)
        dev = np.linalg.norm(cm - self.alpha.points[:, None, :], axis=2)
        return float(dev[mass > 0].max(initial=0.0))

    def support(self):
        idx = np.argwhere(self.weights > 0)
        return [(self.alpha.points[a], self.beta.points[b], self.zeta.points[z],
                 self.weights[a, b, z]) for a, b, z in idx]


def strassen_extend(pi1: MartingaleTransport, pi2: Coupling, tol: float = TAU_LP) -> TripleLaw:
    """Glue ``pi1 in MT(alpha, beta)`` and ``pi2 in cpl(alpha, zeta)`` along alpha.

    The triple law is ``alpha(da) pi1_a(db) pi2_a(dz)``: given ``A``, ``B`` and ``Z``
    are conditionally independent, so ``E[B | A, Z] = E[B | A] = A``.
    """
    a1, a2 = pi1.row_measure, pi2.row_measure
    if a1.size != a2.size or np.max(np.abs(a1.points - a2.points)) > tol \
            or np.max(np.abs(a1.weights - a2.weights)) > tol:
        raise MeasureError("the two couplings do not share their first marginal")
    k1, k2 = pi1.kernel, pi2.kernel
    w = a1.weights[:, None, None] * k1[:, :, None] * k2[:, None, :]
    return TripleLaw(a1, pi1.col_measure, pi2.col_measure, w)


@dataclass
class ChainReport:
    terms: tuple[float, float, float, float]
    gaps: tuple[float, float, float]
    passed: bool

    def __str__(self):
        t = ", ".join(f"{v:.10g}" for v in self.terms)
        return f"mcov chain [{t}] {'PASS' if self.passed else 'FAIL'}"


def verify_mcov_chain(alpha, beta, zeta, tol: float = TAU_LP, backend=None) -> ChainReport:
    """``<bary a, bary z> <= mcov(a, z) <= mcov(b, z) <= (sm b + sm z)/2`` for ``a <=_c b``."""
    order = check_convex_order(alpha, beta, backend)
    if not order:
        raise ConvexOrderError("alpha is not dominated by beta in convex order",
                               order.certificate)
    t0 = float(alpha.barycenter() @ zeta.barycenter())
    t1 = mcov(alpha, zeta, backend)[0]
    t2 = mcov(beta, zeta, backend)[0]
    t3 = 0.5 * (beta.second_moment() + zeta.second_moment())
    gaps = (t1 - t0, t2 - t1, t3 - t2)
    return ChainReport((t0, t1, t2, t3), gaps, all(g >= -tol for g in gaps))


def mean_preserving_split(alpha: DiscreteMeasure, rng: np.random.Generator,
                          spread: float = 1.0, frac: float = 1.0):
    """Split atoms ``(x, w)`` into ``x +- s`` with half weights.

    Returns ``(beta, pi)`` with ``pi in MT(alpha, beta)`` given by an exact
    two-point kernel, so ``alpha <=_c beta`` holds by construction.
    """
    d = alpha.dim
    pts, wts, owner = [], [], []
    for i, (x, w) in enumerate(zip(alpha.points, alpha.weights)):
        if rng.random() < frac:
            s = rng.normal(size=d)
            s *= spread * rng.uniform(0.1, 1.0) / np.linalg.norm(s)
            pts += [x - s, x + s]
            wts += [0.5 * w, 0.5 * w]
            owner += [i, i]
        else:
            pts.append(x)
            wts.append(w)
            owner.append(i)
    beta = DiscreteMeasure.build(np.array(pts), np.array(wts), renormalize=False)
    mass = np.zeros((alpha.size, beta.size))
    for p, w, i in zip(pts, wts, owner):
        mass[i, beta.index_of(p)] += w
    return beta, MartingaleTransport(alpha, beta, mass)
