"""Discrete martingale Benamou-Brenier problem as a single linear program.

The primal variable is a triple law ``q(x, y, z)`` on ``spt mu x spt nu x spt gamma``:

* (i)   ``sum_y q(x, y, z) = mu(x) gamma(z)``
* (ii)  ``sum_{x,z} q(x, y, z) = nu(y)``
* (iii) ``sum_{y,z} q(x, y, z) (y - x) = 0``

maximizing ``sum q <y, z>``.  The multipliers of (i), (ii), (iii) are the
mixture multiplier ``m(x, z)``, the potential ``psi(y)`` and the martingale
multiplier ``h(x)``; dual feasibility reads
``m(x, z) + psi(y) + <h(x), y - x> >= <y, z>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import lp
from .convex import ConvexPL, envelope, normalize_affine
from .geometry import GeometrySummary, Position, hull_geometry
from .lp import TAU_LP, LinearProgram, Sense
from .measures import DiscreteMeasure, MeasureError, quantize_gaussian
from .transport import (ConvexOrderError, MartingaleTransport, check_convex_order,
                        martingale_constraints, mcov, mcov_1d)

TAU_IRR = 1e-10
PRUNE = 1e-13


@dataclass(frozen=True)
class Instance:
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    gamma: DiscreteMeasure
    geometry: GeometrySummary = field(repr=False)

    @classmethod
    def create(cls, mu, nu, gamma=None, n_gauss: int = 64, check: bool = True) -> "Instance":
        """Validate dimensions (and convex order when ``check``) and build the hull of nu."""
        if gamma is None:
            gamma = quantize_gaussian(nu.dim, n_gauss)
        if not (mu.dim == nu.dim == gamma.dim):
            raise MeasureError("mu, nu and gamma must share their dimension")
        if np.max(np.abs(gamma.barycenter())) > 1e-12:
            raise MeasureError("the Gaussian quantization must have zero barycenter")
        if check:
            res = check_convex_order(mu, nu)
            if not res:
                raise ConvexOrderError("mu is not dominated by nu in convex order",
                                       res.certificate)
        return cls(mu, nu, gamma, hull_geometry(nu))

    @property
    def dim(self) -> int:
        return self.nu.dim

    def anchor(self) -> np.ndarray:
        """Atom of nu in I nearest to its barycenter; the barycenter if none is in I."""
        bary = self.nu.barycenter()
        inside = [i for i, c in enumerate(self.geometry.classify(self.nu.points))
                  if c is Position.INTERIOR]
        if not inside:
            return bary
        pts = self.nu.points[inside]
        return pts[np.argmin(np.linalg.norm(pts - bary, axis=1))].copy()


@dataclass(frozen=True)
class PrimalSolution:
    value: float
    triple_mass: np.ndarray  # (n_mu, n_nu, n_gamma)
    sbm_kernel: MartingaleTransport
    per_x_mcov: np.ndarray
    lp_solution: lp.LPSolution = field(repr=False)


@dataclass(frozen=True)
class DualCertificate:
    psi_hat: np.ndarray  # on spt nu
    h: np.ndarray        # (n_mu, d)
    m: np.ndarray        # (n_mu, n_gamma), tightened
    phi_hat: np.ndarray  # (n_mu,)
    value: float
    psi: ConvexPL        # canonical max-affine representative
    anchor: np.ndarray

    def feasibility_violation(self, inst: Instance) -> float:
        """``max (<y,z> - m - psi - <h, y-x>)`` over the whole product grid."""
        y, x, z = inst.nu.points, inst.mu.points, inst.gamma.points
        lhs = (self.m[:, None, :] + self.psi_hat[None, :, None]
               + np.einsum("xk,xyk->xy", self.h, y[None, :, :] - x[:, None, :])[:, :, None])
        rhs = (y @ z.T)[None, :, :]
        return float(np.max(rhs - lhs))


def primal_lp(inst: Instance) -> LinearProgram:
    """The exact triple-coupling LP in equality form (rows (i), (ii), (iii) in that order)."""
    mu, nu, g = inst.mu, inst.nu, inst.gamma
    nx, ny, nz, d = mu.size, nu.size, g.size, inst.dim
    idx = np.arange(nx * ny * nz).reshape(nx, ny, nz)
    rows_i = (np.arange(nx)[:, None, None] * nz + np.arange(nz)[None, None, :])
    rows_i = np.broadcast_to(rows_i, (nx, ny, nz))
    rows_ii = nx * nz + np.broadcast_to(np.arange(ny)[None, :, None], (nx, ny, nz))
    diff = nu.points[None, :, :] - mu.points[:, None, :]  # (nx, ny, d)
    base = nx * nz + ny
    rows_iii = base + np.arange(nx)[:, None, None, None] * d + np.arange(d)[None, None, None, :]
    rows_iii = np.broadcast_to(rows_iii, (nx, ny, nz, d))
    vals_iii = np.broadcast_to(diff[:, :, None, :], (nx, ny, nz, d))
    cols3 = np.broadcast_to(idx[..., None], (nx, ny, nz, d))
    r = np.concatenate([rows_i.ravel(), rows_ii.ravel(), rows_iii.ravel()])
    c = np.concatenate([idx.ravel(), idx.ravel(), cols3.ravel()])
    v = np.concatenate([np.ones(2 * idx.size), vals_iii.ravel()])
    A = sp.csr_matrix((v, (r, c)), shape=(base + nx * d, idx.size))
    A.eliminate_zeros()
    b = np.concatenate([np.outer(mu.weights, g.weights).ravel(), nu.weights, np.zeros(nx * d)])
    cost = np.broadcast_to((nu.points @ g.points.T)[None, :, :], (nx, ny, nz)).ravel()
    return LinearProgram(np.ascontiguousarray(cost), A, b, Sense.MAX)


def per_x_mcov(kernel: MartingaleTransport, gamma: DiscreteMeasure) -> np.ndarray:
    """``mcov(pi_x, gamma)`` for every row atom, computed independently of any triple law."""
    out = np.empty(kernel.row_measure.size)
    for i in range(kernel.row_measure.size):
        px = kernel.conditional(i)
        out[i] = mcov_1d(px, gamma) if gamma.dim == 1 else mcov(px, gamma)[0]
    return out


def solve_primal(inst: Instance, backend=None) -> PrimalSolution:
    prob = primal_lp(inst)
    sol = lp.solve(prob, backend)
    if not sol.optimal:
        raise lp.LPError(f"primal LP ended with status {sol.status.value}; "
                         f"certificate={None if sol.certificate is None else sol.certificate.tolist()}")
    nx, ny, nz = inst.mu.size, inst.nu.size, inst.gamma.size
    q = np.maximum(sol.primal.reshape(nx, ny, nz), 0.0)
    kernel = MartingaleTransport(inst.mu, inst.nu, q.sum(axis=2))
    return PrimalSolution(sol.objective_value, q, kernel, per_x_mcov(kernel, inst.gamma), sol)


def triple_per_x_value(inst: Instance, ps: PrimalSolution) -> np.ndarray:
    """Per-x value of the coupling stored in the triple law."""
    c = inst.nu.points @ inst.gamma.points.T
    return np.einsum("xyz,yz->x", ps.triple_mass, c) / inst.mu.weights


def extract_dual(inst: Instance, ps: PrimalSolution, tol: float = TAU_LP) -> DualCertificate:
    """Read the LP multipliers, tighten them, and put psi into canonical affine gauge.

    ``psi`` is replaced by the tight value ``max_{x,z}(<y,z> - m - <h, y-x>)``
    (never larger, still feasible), then by the canonical representative of its
    lower envelope; ``m`` is re-tightened against the normalized ``psi`` and
    ``h`` follows the affine gauge.
    """
    nx, ny, nz, d = inst.mu.size, inst.nu.size, inst.gamma.size, inst.dim
    duals = ps.lp_solution.duals
    m = duals[: nx * nz].reshape(nx, nz)
    psi = duals[nx * nz: nx * nz + ny]
    h = duals[nx * nz + ny:].reshape(nx, d)
    x, y, z = inst.mu.points, inst.nu.points, inst.gamma.points
    slack = np.einsum("xk,xyk->xy", h, y[None, :, :] - x[:, None, :])
    # tight psi: smallest value keeping every (x, y, z) constraint satisfied
    psi = np.max((y @ z.T)[None, :, :] - m[:, None, :] - slack[:, :, None], axis=(0, 2))
    anchor = inst.anchor()
    env = envelope(y, psi)
    psi_fn = normalize_affine(env, anchor)
    # the gauge change psi -> psi_fn is affine on C: recover (slope, intercept) on spt nu
    new_psi = psi_fn(y)
    design = np.column_stack([y, np.ones(ny)])
    coef, *_ = np.linalg.lstsq(design, new_psi - psi, rcond=None)
    slope = coef[:d]
    h = h - slope[None, :]
    slack = np.einsum("xk,xyk->xy", h, y[None, :, :] - x[:, None, :])
    m_t = np.max((y @ z.T)[None, :, :] - new_psi[None, :, None] - slack[:, :, None], axis=1)
    phi = -(m_t @ inst.gamma.weights)
    value = float(inst.mu.weights @ m_t @ inst.gamma.weights + inst.nu.weights @ new_psi)
    cert = DualCertificate(new_psi, h, m_t, phi, value, psi_fn, anchor)
    gap = abs(value - ps.value)
    if gap > tol * (1 + abs(ps.value)):
        raise lp.LPError(f"duality gap {gap:.3e} exceeds tolerance")
    return cert


def irreducibility(inst: Instance, backend=None) -> tuple[bool, MartingaleTransport, float]:
    """``max t`` over ``pi in MT(mu, nu)`` with ``pi(x, y) >= t`` on the full product grid.

    Variables are ``s = pi - t >= 0`` and ``t >= 0``.
    """
    A, b = martingale_constraints(inst.mu, inst.nu)
    # column for t: pi = s + t * 1
    tcol = np.asarray(A.sum(axis=1)).ravel()
    A2 = sp.hstack([A, sp.csr_matrix(tcol[:, None])]).tocsr()
    c = np.zeros(A2.shape[1])
    c[-1] = 1.0
    sol = lp.solve(LinearProgram(c, A2, b, Sense.MAX), backend)
    if not sol.optimal:
        raise lp.LPError(f"irreducibility LP ended with status {sol.status.value}")
    t = float(sol.primal[-1])
    pi = sol.primal[:-1].reshape(inst.mu.size, inst.nu.size) + t
    return t > TAU_IRR, MartingaleTransport(inst.mu, inst.nu, pi), t


def sbm_min_mass(inst: Instance, ps: PrimalSolution, backend=None) -> tuple[float, np.ndarray]:
    """Among optimal triple laws, maximize the smallest kernel entry ``pi(x, y)``.

    Secondary objective used to test that an optimal kernel charges every atom
    of nu; returns ``(t, kernel)``.
    """
    prob = primal_lp(inst)
    nx, ny, nz = inst.mu.size, inst.nu.size, inst.gamma.size
    nq = nx * ny * nz
    A = prob.A_eq if sp.issparse(prob.A_eq) else sp.csr_matrix(prob.A_eq)
    # rows: old rows | objective >= value - slack_tol | sum_z q(x,y,z) - t - s_xy = 0
    cols_q = np.arange(nq).reshape(nx, ny, nz)
    r = np.repeat(np.arange(nx * ny), nz)
    K = sp.csr_matrix((np.ones(nq), (r, cols_q.ravel())), shape=(nx * ny, nq))
    n_extra = 1 + nx * ny + 1  # t, s_xy, objective slack
    top = sp.hstack([A, sp.csr_matrix((A.shape[0], n_extra))])
    obj_row = sp.hstack([sp.csr_matrix(prob.objective[None, :]),
                         sp.csr_matrix(([-1.0], ([0], [n_extra - 1])), shape=(1, n_extra))])
    tcol = -np.ones((nx * ny, 1))
    link = sp.hstack([K, sp.csr_matrix(tcol), -sp.identity(nx * ny), sp.csr_matrix((nx * ny, 1))])
    A2 = sp.vstack([top, obj_row, link]).tocsr()
    floor = ps.value - 1e-9 * (1 + abs(ps.value))
    b2 = np.concatenate([prob.b_eq, [floor], np.zeros(nx * ny)])
    c2 = np.zeros(A2.shape[1])
    c2[nq] = 1.0
    sol = lp.solve(LinearProgram(c2, A2, b2, Sense.MAX), backend or "highs")
    if not sol.optimal:
        raise lp.LPError(f"secondary LP ended with status {sol.status.value}")
    q = sol.primal[:nq].reshape(nx, ny, nz)
    return float(sol.primal[nq]), q.sum(axis=2)


def localize(inst: Instance, ps: PrimalSolution, B) -> tuple[Instance, MartingaleTransport]:
    """Restrict to the atoms of mu in ``B`` (boolean mask or index list).

    ``mu^B = mu(B & .)/mu(B)``, ``nu^B = sum_{x in B} mu^B(x) pi_x`` and
    ``pi^B(x, y) = mu^B(x) pi_x(y)``.
    """
    mask = np.zeros(inst.mu.size, dtype=bool)
    B = np.asarray(B)
    if B.dtype == bool:
        mask[:] = B
    else:
        mask[B.astype(int)] = True
    if not mask.any():
        raise MeasureError("localization set B carries no mu-mass")
    mu_b = inst.mu.restrict(mask)
    k = ps.sbm_kernel.kernel[mask]
    k = np.where(k > PRUNE, k, 0.0)
    k /= k.sum(axis=1, keepdims=True)
    col_w = mu_b.weights @ k
    keep = col_w > 0
    nu_b = DiscreteMeasure(inst.nu.points[keep], col_w[keep] / col_w[keep].sum())
    pi_b = MartingaleTransport.from_kernel(mu_b, nu_b, k[:, keep])
    return Instance.create(mu_b, nu_b, inst.gamma, check=False), pi_b


def kernel_value(pi: MartingaleTransport, gamma: DiscreteMeasure) -> float:
    """``sum_x mu(x) mcov(pi_x, gamma)``, the objective attained by a kernel."""
    return float(pi.row_measure.weights @ per_x_mcov(pi, gamma))


def sample_mt(inst: Instance, seed: int, backend=None) -> MartingaleTransport:
    """A vertex of MT(mu, nu) selected by a seeded random linear objective."""
    A, b = martingale_constraints(inst.mu, inst.nu)
    c = np.random.default_rng(seed).normal(size=A.shape[1])
    sol = lp.solve(LinearProgram(c, A, b, Sense.MIN), backend)
    if not sol.optimal:
        raise lp.LPError(f"MT sampling LP ended with status {sol.status.value}")
    return MartingaleTransport(inst.mu, inst.nu, sol.primal.reshape(inst.mu.size, inst.nu.size))
