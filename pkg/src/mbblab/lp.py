"""Equality-form linear programming with primal, dual and Farkas outputs.

Two backends share one contract:

* ``"simplex"``: a dense revised simplex written here (two phases, Dantzig
  pricing with a Bland fallback on stalls, explicit basis inverse refreshed
  from an LU factorization every 100 pivots).
* ``"highs"``: the HiGHS dual simplex shipped with SciPy, used for the larger
  problems (tens of thousands of columns) built by the transport solvers.

Problems are ``opt c^T x  s.t.  A x = b,  x >= 0``.  Duals are reported in the
sense of the problem as posed: for MAX, ``A^T y >= c`` and ``b^T y`` equals the
optimum; for MIN, ``A^T y <= c``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import linprog

TAU_LP = 1e-8

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
    "presolve": True,
}


class LPError(RuntimeError):
    """Numerical breakdown or malformed input; never a silently wrong answer."""


class Status(enum.Enum):
    OPTIMAL = "OPTIMAL"
    INFEASIBLE = "INFEASIBLE"
    UNBOUNDED = "UNBOUNDED"


class Sense(enum.Enum):
    MIN = "MIN"
    MAX = "MAX"


@dataclass
class LinearProgram:
    """``opt objective @ x`` subject to ``A_eq @ x = b_eq`` and ``x >= 0``."""

    objective: np.ndarray
    A_eq: sp.csr_matrix | np.ndarray
    b_eq: np.ndarray
    sense: Sense = Sense.MIN

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).ravel()
        self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if sp.issparse(self.A_eq):
            self.A_eq = sp.csr_matrix(self.A_eq, dtype=float)
        else:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
        m, n = self.A_eq.shape
        if n < 1:
            raise LPError("a linear program needs at least one variable")
        if self.objective.size != n:
            raise LPError(f"objective has {self.objective.size} entries, A_eq has {n} columns")
        if self.b_eq.size != m:
            raise LPError(f"b_eq has {self.b_eq.size} entries, A_eq has {m} rows")
        data = self.A_eq.data if sp.issparse(self.A_eq) else self.A_eq
        if not (np.all(np.isfinite(data)) and np.all(np.isfinite(self.b_eq))
                and np.all(np.isfinite(self.objective))):
            raise LPError("non-finite coefficient in linear program")

    @property
    def n_vars(self) -> int:
        return self.A_eq.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A_eq.shape[0]

    def dense_A(self) -> np.ndarray:
        return self.A_eq.toarray() if sp.issparse(self.A_eq) else self.A_eq


@dataclass
class LPSolution:
    status: Status
    primal: np.ndarray | None = None
    duals: np.ndarray | None = None
    objective_value: float = float("nan")
    # For INFEASIBLE: y with A^T y <= 0 and b^T y > 0.
    certificate: np.ndarray | None = None
    iterations: int = 0
    backend: str = ""
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def residuals(lp: LinearProgram, sol: LPSolution) -> dict:
    """Primal/dual feasibility residuals and the duality gap of an optimal solution."""
    x, y = sol.primal, sol.duals
    Ax = lp.A_eq @ x
    primal_res = float(max(np.max(np.abs(Ax - lp.b_eq), initial=0.0),
                           np.max(-x, initial=0.0)))
    reduced = lp.objective - lp.A_eq.T @ y
    if lp.sense is Sense.MAX:
        reduced = -reduced
    dual_res = float(np.max(-reduced, initial=0.0))
    gap = abs(float(lp.objective @ x) - float(lp.b_eq @ y))
    slack = float(np.max(np.abs(x * reduced), initial=0.0))
    return {"primal": primal_res, "dual": dual_res, "gap": gap, "complementarity": slack}


def solve(lp: LinearProgram, backend: str | None = None) -> LPSolution:
    """Solve ``lp``; ``backend`` is ``"simplex"``, ``"highs"`` or None (size based)."""
    if backend is None:
        backend = "simplex" if lp.n_vars * max(lp.n_rows, 1) <= 20_000 else "highs"
    if backend == "simplex":
        return _RevisedSimplex(lp).run()
    if backend == "highs":
        return _solve_highs(lp)
    raise ValueError(f"unknown LP backend {backend!r}")


def check_feasible(lp: LinearProgram, backend: str | None = None):
    """Return ``(feasible, witness_or_certificate)`` for the constraint set of ``lp``."""
    zero = LinearProgram(np.zeros(lp.n_vars), lp.A_eq, lp.b_eq, Sense.MIN)
    try:
        sol = solve(zero, backend)
    except LPError:
        # infeasible by the solver's tolerances, but without a strict separating
        # certificate: decide by the smallest attainable constraint residual
        return _elastic_feasible(lp)
    if sol.status is Status.OPTIMAL:
        return True, sol.primal
    y = sol.certificate
    if y is not None and np.abs(y).max() > 0:
        margin = float(lp.b_eq @ y) / float(np.abs(y).max())
        if margin > TAU_LP:
            return False, y
    # a certificate separating by less than TAU_LP proves nothing at working precision
    return _elastic_feasible(lp)


def _elastic_feasible(lp: LinearProgram):
    A = sp.csr_matrix(lp.A_eq) if not sp.issparse(lp.A_eq) else lp.A_eq.tocsr()
    m, n = A.shape
    eye = sp.identity(m, format="csr")
    A_el = sp.hstack([A, eye, -eye]).tocsr()
    c = np.concatenate([np.zeros(n), np.ones(2 * m)])
    res = linprog(c, A_eq=A_el, b_eq=lp.b_eq, bounds=(0, None), method="highs-ds",
                  options=_HIGHS_OPTIONS)
    if res.status != 0:
        raise LPError(f"elastic feasibility LP failed: {res.message}")
    if res.fun <= TAU_LP:
        return True, np.maximum(res.x[:n], 0.0)
    y = np.asarray(res.eqlin.marginals, dtype=float)
    return False, y / max(np.abs(y).max(), 1e-300)


# --------------------------------------------------------------------------
# HiGHS backend


def _solve_highs(lp: LinearProgram) -> LPSolution:
    c = lp.objective if lp.sense is Sense.MIN else -lp.objective
    A = sp.csr_matrix(lp.A_eq) if not sp.issparse(lp.A_eq) else lp.A_eq
    res = linprog(c, A_eq=A, b_eq=lp.b_eq, bounds=(0, None), method="highs-ds",
                  options=_HIGHS_OPTIONS)
    if res.status == 0:
        y = np.asarray(res.eqlin.marginals, dtype=float)
        x = np.maximum(np.asarray(res.x, dtype=float), 0.0)
        if lp.sense is Sense.MAX:
            y = -y
        return LPSolution(Status.OPTIMAL, x, y, float(lp.objective @ x),
                          iterations=int(res.nit), backend="highs")
    if res.status == 2:
        return LPSolution(Status.INFEASIBLE, certificate=_farkas_highs(A, lp.b_eq),
                          backend="highs")
    if res.status == 3:
        return LPSolution(Status.UNBOUNDED, backend="highs")
    raise LPError(f"HiGHS failed: {res.message}")


def _farkas_highs(A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    # max b^T y  s.t.  A^T y <= 0,  -1 <= y <= 1
    m = A.shape[0]
    res = linprog(-b, A_ub=A.T.tocsr(), b_ub=np.zeros(A.shape[1]), bounds=(-1, 1),
                  method="highs-ds", options=_HIGHS_OPTIONS)
    if res.status != 0 or -res.fun <= 0:
        raise LPError("infeasible LP but no Farkas certificate was found")
    return np.asarray(res.x, dtype=float).reshape(m)


# --------------------------------------------------------------------------
# Revised simplex


class _RevisedSimplex:
    REFACTOR_EVERY = 100
    STALL_LIMIT = 50
    PIVOT_TOL = 1e-9
    COST_TOL = 1e-10

    def __init__(self, lp: LinearProgram):
        self.lp = lp
        A = lp.dense_A().copy()
        b = lp.b_eq.copy()
        self.flip = np.where(b < 0, -1.0, 1.0)
        self.A = A * self.flip[:, None]
        self.b = b * self.flip
        self.m, self.n = self.A.shape
        self.iterations = 0

    # basis bookkeeping -------------------------------------------------
    def _refactor(self):
        B = self.full[:, self.basis]
        try:
            lu = scipy.linalg.lu_factor(B, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise LPError("singular basis") from exc
        if np.min(np.abs(np.diag(lu[0])), initial=np.inf) < 1e-13:
            raise LPError("singular basis after refactorization")
        self.Binv = scipy.linalg.lu_solve(lu, np.eye(self.m), check_finite=False)
        self.since_refactor = 0

    def _pivot(self, leave_row: int, enter: int, column: np.ndarray):
        piv = column[leave_row]
        row = self.Binv[leave_row] / piv
        self.Binv -= np.outer(column, row)
        self.Binv[leave_row] = row
        self.basis[leave_row] = enter
        self.since_refactor += 1
        if self.since_refactor >= self.REFACTOR_EVERY:
            self._refactor()

    def _iterate(self, cost: np.ndarray, allowed: np.ndarray) -> Status:
        """Minimize ``cost`` over the current basis; columns outside ``allowed`` never enter."""
        bland = False
        stall = 0
        last_obj = np.inf
        while True:
            self.iterations += 1
            if self.iterations > 50_000 + 50 * (self.m + self.n):
                raise LPError("simplex iteration limit reached")
            xB = self.Binv @ self.b
            y = cost[self.basis] @ self.Binv
            d = cost - y @ self.full
            d[self.basis] = 0.0
            candidates = np.flatnonzero(allowed & (d < -self.COST_TOL))
            if candidates.size == 0:
                return Status.OPTIMAL
            enter = int(candidates[0]) if bland else int(candidates[np.argmin(d[candidates])])
            column = self.Binv @ self.full[:, enter]
            pos = column > self.PIVOT_TOL
            if not np.any(pos):
                return Status.UNBOUNDED
            ratios = np.full(self.m, np.inf)
            ratios[pos] = np.maximum(xB[pos], 0.0) / column[pos]
            best = np.min(ratios)
            ties = np.flatnonzero(ratios <= best + 1e-12)
            # prefer the largest pivot among ties, smallest variable index under Bland
            if bland:
                leave_row = int(ties[np.argmin(self.basis[ties])])
            else:
                leave_row = int(ties[np.argmax(np.abs(column[ties]))])
            obj = float(cost[self.basis] @ xB)
            if obj < last_obj - 1e-12:
                stall = 0
                last_obj = obj
            else:
                stall += 1
                if stall > self.STALL_LIMIT:
                    bland = True
            self._pivot(leave_row, enter, column)

    def run(self) -> LPSolution:
        m, n = self.m, self.n
        # phase one on [A | I] with artificials
        self.full = np.hstack([self.A, np.eye(m)])
        self.basis = np.arange(n, n + m)
        self._refactor()
        cost1 = np.concatenate([np.zeros(n), np.ones(m)])
        allowed = np.ones(n + m, dtype=bool)
        status = self._iterate(cost1, allowed)
        if status is not Status.OPTIMAL:
            raise LPError("phase one did not terminate optimally")
        xB = self.Binv @ self.b
        infeas = float(cost1[self.basis] @ xB)
        if infeas > 1e-9 * (1.0 + np.abs(self.b).max(initial=0.0)):
            y = cost1[self.basis] @ self.Binv
            # phase-one duals: A^T y <= 0 on flipped rows, b^T y = infeasibility
            cert = y * self.flip
            return LPSolution(Status.INFEASIBLE, certificate=cert,
                              iterations=self.iterations, backend="simplex")
        self._drive_out_artificials()
        allowed = np.concatenate([np.ones(n, dtype=bool), np.zeros(m, dtype=bool)])
        c = self.lp.objective if self.lp.sense is Sense.MIN else -self.lp.objective
        cost2 = np.concatenate([c, np.zeros(m)])
        status = self._iterate(cost2, allowed)
        if status is Status.UNBOUNDED:
            return LPSolution(Status.UNBOUNDED, iterations=self.iterations, backend="simplex")
        self._refactor()
        xB = self.Binv @ self.b
        x_full = np.zeros(n + m)
        x_full[self.basis] = xB
        if np.any(x_full[n:] > 1e-9):
            raise LPError("artificial variable left positive after phase two")
        x = np.maximum(x_full[:n], 0.0)
        y = (cost2[self.basis] @ self.Binv) * self.flip
        if self.lp.sense is Sense.MAX:
            y = -y
        return LPSolution(Status.OPTIMAL, x, y, float(self.lp.objective @ x),
                          iterations=self.iterations, backend="simplex")

    def _drive_out_artificials(self):
        """Pivot basic artificials out; rows where that is impossible are redundant."""
        n = self.n
        for row in range(self.m):
            if self.basis[row] < n:
                continue
            tableau_row = self.Binv[row] @ self.full[:, :n]
            nonbasic = np.ones(n, dtype=bool)
            nonbasic[self.basis[self.basis < n]] = False
            cand = np.flatnonzero(nonbasic & (np.abs(tableau_row) > 1e-7))
            if cand.size == 0:
                # redundant row: the artificial stays basic at zero and never re-enters
                continue
            enter = int(cand[np.argmax(np.abs(tableau_row[cand]))])
            column = self.Binv @ self.full[:, enter]
            self._pivot(row, enter, column)
        self._refactor()
