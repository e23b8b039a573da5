"""Entropy-regularized triple-coupling problem.

For ``eps > 0`` the regularized optimizer has the Gibbs form

    q(x, y, z) = exp((<y, z> - m(x, z) - psi(y) - <h(x), y - x>) / eps)

The solver runs iterative Bregman projections: each sweep projects (in
Kullback-Leibler sense) onto the three constraint families of the exact
problem in turn, the ``(x, z)`` marginals (closed form in ``m``), the ``y``
marginal (closed form in ``psi``) and the per-x mean constraints (a
d-dimensional Newton solve for ``h(x)``).  Alternating projections slow down
badly once ``eps`` is small, so when the sweeps stall the same dual potential

    F(u) = <b, u> + eps * sum exp((c - A^T u) / eps),    u = (m, psi, h)

is minimized jointly by damped Newton steps (Hessian ``A diag(q) A^T / eps``).
Everything is computed in the log domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

MAX_SWEEPS = 10_000
NEWTON_ITERS = 50
STALL_SWEEPS = 10
FLOOR = 1e-9


@dataclass
class EntropicState:
    m: np.ndarray    # (nx, nz)
    psi: np.ndarray  # (ny,)
    h: np.ndarray    # (nx, d)

    def copy(self) -> "EntropicState":
        return EntropicState(self.m.copy(), self.psi.copy(), self.h.copy())


@dataclass
class EntropicResult:
    eps: float
    state: EntropicState
    plan: np.ndarray
    value: float      # <c, q>
    residual: float
    sweeps: int
    newton_steps: int


class EntropicMBB:
    """Regularized solver bound to one instance; reusable across ``eps`` levels."""

    def __init__(self, inst):
        from .mbb import primal_lp

        mu, nu, gamma = inst.mu, inst.nu, inst.gamma
        self.shape = (mu.size, nu.size, gamma.size, nu.dim)
        self.c = nu.points @ gamma.points.T                                  # (ny, nz)
        self.diff = nu.points[None, :, :] - mu.points[:, None, :]            # (nx, ny, d)
        self.mu_pts, self.nu_pts = mu.points, nu.points
        self.mg = np.outer(mu.weights, gamma.weights)
        self.log_mg = np.log(self.mg)
        self.nu_w = nu.weights
        self.log_nu = np.log(nu.weights)
        prob = primal_lp(inst)
        self.A = prob.A_eq.tocsr()
        self.b = prob.b_eq
        self.cost = prob.objective
        self.gauge = self._gauge_basis()

    # -- conversions ---------------------------------------------------------
    def initial_state(self) -> EntropicState:
        nx, ny, nz, d = self.shape
        return EntropicState(np.zeros((nx, nz)), np.zeros(ny), np.zeros((nx, d)))

    def _gauge_basis(self) -> np.ndarray:
        """Orthonormal basis of the null space of ``A^T``.

        Shifting ``m`` up and ``psi`` down by a constant, or adding an affine
        ``<a, y>`` to ``psi`` with ``h -= a`` and ``m -= <a, x>``, leaves every
        plan entry unchanged.  Newton steps along these directions are free and
        only cost precision, so they are projected out.
        """
        nx, ny, nz, d = self.shape
        cols = [self._flat(EntropicState(np.ones((nx, nz)), -np.ones(ny), np.zeros((nx, d))))]
        for k in range(d):
            h = np.zeros((nx, d))
            h[:, k] = -1.0
            cols.append(self._flat(EntropicState(-np.repeat(self.mu_pts[:, k:k + 1], nz, axis=1),
                                                 self.nu_pts[:, k].copy(), h)))
        q, _ = np.linalg.qr(np.column_stack(cols))
        return q

    def _degauge(self, v: np.ndarray) -> np.ndarray:
        return v - self.gauge @ (self.gauge.T @ v)

    def _flat(self, s: EntropicState) -> np.ndarray:
        return np.concatenate([s.m.ravel(), s.psi, s.h.ravel()])

    def _unflat(self, u: np.ndarray) -> EntropicState:
        nx, ny, nz, d = self.shape
        return EntropicState(u[: nx * nz].reshape(nx, nz).copy(),
                             u[nx * nz: nx * nz + ny].copy(),
                             u[nx * nz + ny:].reshape(nx, d).copy())

    def _logq(self, s: EntropicState, eps: float) -> np.ndarray:
        tilt = np.einsum("xk,xyk->xy", s.h, self.diff)
        return (self.c[None, :, :] - s.m[:, None, :] - s.psi[None, :, None]
                - tilt[:, :, None]) / eps

    def residual(self, s: EntropicState, eps: float) -> float:
        """L1 norm of the violation of all three constraint families."""
        lq = self._logq(s, eps)
        if lq.max() > 700:
            return np.inf
        q = np.exp(lq).ravel()
        return float(np.abs(self.A @ q - self.b).sum())

    # -- Bregman projections -------------------------------------------------
    def _project_h(self, s: EntropicState, eps: float):
        # per x: minimize logsumexp_y(a_y - <eta, v_y>) over eta; h += eps * eta
        tilt = np.einsum("xk,xyk->xy", s.h, self.diff)
        base = (self.c[None, :, :] - s.m[:, None, :] - s.psi[None, :, None]) / eps
        a = logsumexp(base, axis=2) - tilt / eps                             # (nx, ny)
        d = self.diff.shape[2]
        for i in range(a.shape[0]):
            v = self.diff[i]
            eta = np.zeros(d)
            for _ in range(NEWTON_ITERS):
                lw = a[i] - v @ eta
                f0 = logsumexp(lw)
                w = np.exp(lw - f0)
                mean = w @ v
                if np.linalg.norm(mean) <= 1e-15 * (1 + np.abs(v).max()):
                    break
                cov = (v * w[:, None]).T @ v - np.outer(mean, mean)
                step = np.linalg.lstsq(cov, mean, rcond=None)[0]
                t = 1.0
                while t > 1e-12:
                    if logsumexp(a[i] - v @ (eta + t * step)) <= f0 - 1e-4 * t * (mean @ step):
                        break
                    t *= 0.5
                eta = eta + t * step
                if t * np.linalg.norm(step) <= 1e-14 * (1 + np.linalg.norm(eta)):
                    break
            s.h[i] += eps * eta

    def sweep(self, s: EntropicState, eps: float):
        """One cycle of projections onto (i), (ii) and (iii)."""
        lq = self._logq(s, eps)
        s.m += eps * (logsumexp(lq, axis=1) - self.log_mg)
        lq = self._logq(s, eps)
        s.psi += eps * (logsumexp(lq, axis=(0, 2)) - self.log_nu)
        self._project_h(s, eps)

    # -- joint Newton on the dual potential ----------------------------------
    def _potential(self, u, eps):
        z = (self.cost - self.A.T @ u) / eps
        top = logsumexp(z)
        if top > 700:
            return np.inf, None
        return float(self.b @ u + eps * np.exp(top)), np.exp(z)

    def newton(self, s: EntropicState, eps: float, tol: float, max_iter: int = 200):
        u = self._degauge(self._flat(s))
        f, q = self._potential(u, eps)
        if q is None:
            return 0
        k = 0
        best, since_best = np.inf, 0
        for k in range(1, max_iter + 1):
            g = self.b - self.A @ q
            gn = np.abs(g).sum()
            if gn < tol:
                k -= 1
                break
            # at the floating-point floor the residual stops shrinking;
            # slow damped progress far from it is not a stall
            if gn < 0.99 * best:
                best, since_best = gn, 0
            else:
                since_best += 1
                if since_best >= 8 and best <= FLOOR:
                    break
            H = (self.A.multiply(q[None, :]) @ self.A.T).toarray() / eps
            ridge = 1e-13 * np.trace(H) / H.shape[0]
            try:
                step = scipy.linalg.solve(H + ridge * np.eye(H.shape[0]), g, assume_a="pos")
            except (np.linalg.LinAlgError, ValueError):
                step = np.linalg.lstsq(H, g, rcond=None)[0]
            step = self._degauge(step)
            # F decreases along -step since grad F = -g
            # Armijo on F; near machine precision F stops resolving the decrease,
            # so a step that shrinks the constraint residual is accepted as well
            t = 1.0
            slope = -(g @ step)
            gnorm = np.abs(g).sum()
            while t > 1e-14:
                f_new, q_new = self._potential(u - t * step, eps)
                if f_new <= f + 1e-4 * t * slope:
                    break
                if q_new is not None and \
                        np.abs(self.b - self.A @ q_new).sum() <= (1 - 1e-4 * t) * gnorm:
                    break
                t *= 0.5
            else:
                break
            u, f, q = u - t * step, f_new, q_new
        new = self._unflat(u)
        s.m, s.psi, s.h = new.m, new.psi, new.h
        return k

    # -- drivers -------------------------------------------------------------
    def solve(self, eps: float, state: EntropicState | None = None, tol: float | None = None,
              max_sweeps: int = MAX_SWEEPS, check_every: int = 5) -> EntropicResult:
        """Project until the residual is below ``tol`` (default ``eps / 100``).

        Bregman sweeps run first; if the residual has not dropped below
        ``tol`` after ``STALL_SWEEPS`` sweeps, joint Newton steps finish the level.
        The total number of sweeps never exceeds ``max_sweeps``.  A cold start at
        small ``eps`` may not reach ``tol`` (the returned residual says so);
        ``path`` warm-starts instead.
        """
        if state is None:
            s = self.initial_state()
            # the (i) projection makes every plan entry finite
            s.m += eps * (logsumexp(self._logq(s, eps), axis=1) - self.log_mg)
        else:
            s = state.copy()
        tol = eps / 100 if tol is None else tol
        res = self.residual(s, eps)
        k = 0
        newton_steps = 0
        while res >= tol and k < max_sweeps:
            self.sweep(s, eps)
            k += 1
            if k % check_every == 0 or k == max_sweeps:
                res = self.residual(s, eps)
                if k >= min(STALL_SWEEPS, max_sweeps) and res >= tol:
                    newton_steps = self.newton(s, eps, tol)
                    res = self.residual(s, eps)
                    break
        q = np.exp(self._logq(s, eps))
        value = float(np.einsum("xyz,yz->", q, self.c))
        return EntropicResult(eps, s, q, value, res, k, newton_steps)

    def path(self, eps_schedule, warmup: bool = True, **kw) -> list[EntropicResult]:
        """Solve along a decreasing schedule, warm-starting each level from the previous one.

        With ``warmup`` the path first descends from ``eps = 1`` by halving to the
        first scheduled level; only the scheduled levels are returned.
        """
        eps_schedule = [float(e) for e in eps_schedule]
        state = None
        if warmup:
            e = 1.0
            while e > 2 * eps_schedule[0]:
                state = self.solve(e, state, **kw).state
                e *= 0.5
        out = []
        for eps in eps_schedule:
            r = self.solve(eps, state, **kw)
            out.append(r)
            state = r.state
        return out
