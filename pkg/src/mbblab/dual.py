"""The auxiliary potential phi^psi, the dual functional D(psi), the L(psi) criterion
and generators of dual optimizing sequences.

``phi^psi(x) = inf { int psi dp - mcov(p, gamma) : p with barycenter x }`` is
computed on a finite grid ``Y`` as the LP

    min  sum r(y, z) (psi(y) - <y, z>)
    s.t. sum_y r(y, z) = gamma(z),   sum_{y,z} y r(y, z) = x,   r >= 0.

Enlarging ``Y`` can only lower the computed value.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import lp
from .convex import ConvexPL, envelope, normalize_affine
from .geometry import Position
from .lp import TAU_LP, LinearProgram, Sense
from .measures import DiscreteMeasure
from .transport import MartingaleTransport

TOL_OPT = 1e-6
GRID_DIVISIONS = 16


class PhiDomainError(ValueError):
    """``x`` lies outside the convex hull of the evaluation grid."""


def phi_grid(inst, divisions: int = GRID_DIVISIONS) -> np.ndarray:
    """``spt nu`` together with ``spt mu`` and a lattice of C at spacing diam(C)/divisions."""
    pts = np.vstack([inst.nu.points, inst.mu.points, inst.geometry.lattice(divisions)])
    return np.unique(np.round(pts, 13), axis=0)


class PhiSolver:
    """Per-x LP for ``phi^psi`` with the constraint matrix built once for (gamma, Y)."""

    def __init__(self, gamma: DiscreteMeasure, Y, backend: str | None = "highs"):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        self.gamma, self.Y, self.backend = gamma, Y, backend
        ny, nz, d = len(Y), gamma.size, gamma.dim
        cols = np.arange(ny * nz).reshape(ny, nz)
        rows_z = np.broadcast_to(np.arange(nz)[None, :], (ny, nz))
        r = [rows_z.ravel()]
        c = [cols.ravel()]
        v = [np.ones(ny * nz)]
        for k in range(d):
            r.append(np.full(ny * nz, nz + k))
            c.append(cols.ravel())
            v.append(np.repeat(Y[:, k], nz))
        self.A = sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                               shape=(nz + d, ny * nz))
        self.yz = Y @ gamma.points.T  # (ny, nz)

    def solve(self, psi: ConvexPL, x) -> tuple[float, np.ndarray]:
        """``(phi^psi(x), optimal r)`` on the grid."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        cost = (psi(self.Y)[:, None] - self.yz).ravel()
        b = np.concatenate([self.gamma.weights, x])
        sol = lp.solve(LinearProgram(cost, self.A, b, Sense.MIN), self.backend)
        if sol.status is lp.Status.INFEASIBLE:
            raise PhiDomainError(f"x = {x} is outside the convex hull of the grid")
        if not sol.optimal:
            raise lp.LPError(f"phi LP ended with status {sol.status.value}")
        return sol.objective_value, sol.primal.reshape(len(self.Y), self.gamma.size)

    def __call__(self, psi: ConvexPL, x) -> float:
        return self.solve(psi, x)[0]


def phi_psi(psi: ConvexPL, x, gamma: DiscreteMeasure, Y) -> float:
    return PhiSolver(gamma, Y)(psi, x)


def phi_psi_dual_1d(psi: ConvexPL, x: float, gamma: DiscreteMeasure, Y) -> float:
    """Independent route for d = 1: maximize the concave dual over the tilt ``h``.

    ``phi(x) = max_h  h x + sum_z gamma(z) min_y (psi(y) - y z - h y)``; the
    maximum sits at a kink, i.e. at a slope between two grid points shifted by
    some ``z``.  Brute force, meant for small grids.
    """
    y = np.asarray(Y, dtype=float).ravel()
    z = gamma.points[:, 0]
    pv = psi(y[:, None])
    base = pv[:, None] - y[:, None] * z[None, :]  # (ny, nz)

    def G(h):
        return h * x + gamma.weights @ np.min(base - h * y[:, None], axis=0)

    i, j = np.triu_indices(len(y), 1)
    dy = y[j] - y[i]
    slopes = (pv[j] - pv[i]) / dy
    cand = (slopes[:, None] - z[None, :]).ravel()
    cand = np.unique(cand)
    vals = np.array([G(h) for h in cand])
    return float(vals.max())


class DualContext:
    """Instance, primal solution and phi grid bundled for repeated evaluations."""

    def __init__(self, inst, ps, divisions: int = GRID_DIVISIONS, Y=None):
        self.inst, self.ps = inst, ps
        self.Y = phi_grid(inst, divisions) if Y is None else np.asarray(Y, dtype=float)
        self.solver = PhiSolver(inst.gamma, self.Y)

    def phi(self, psi: ConvexPL) -> np.ndarray:
        return np.array([self.solver(psi, x) for x in self.inst.mu.points])

    def D(self, psi: ConvexPL, pi: MartingaleTransport | None = None) -> float:
        pi = self.ps.sbm_kernel if pi is None else pi
        return D_of(psi, pi, self.inst.gamma, self.Y, solver=self.solver)

    def L(self, psi: ConvexPL) -> np.ndarray:
        k = self.ps.sbm_kernel.kernel
        return k @ psi(self.inst.nu.points) - self.phi(psi)

    def e(self, psi: ConvexPL) -> float:
        """``sum_x mu(x) |L(psi)(x) - mcov(pi_x, gamma)|``."""
        return float(self.inst.mu.weights @ np.abs(self.L(psi) - self.ps.per_x_mcov))


def D_of(psi: ConvexPL, pi: MartingaleTransport, gamma, Y, solver: PhiSolver | None = None) -> float:
    """``sum_x mu(x) (int psi d pi_x - phi^psi(x))``."""
    solver = solver or PhiSolver(gamma, Y)
    mu = pi.row_measure
    integ = pi.kernel @ psi(pi.col_measure.points)
    phi = np.array([solver(psi, x) for x in mu.points])
    return float(mu.weights @ (integ - phi))


def L_of(psi: ConvexPL, ps, i: int, gamma, Y, solver: PhiSolver | None = None) -> float:
    """``int psi d pi^SBM_x - phi^psi(x)`` for the i-th atom of mu."""
    solver = solver or PhiSolver(gamma, Y)
    k = ps.sbm_kernel
    return float(k.kernel[i] @ psi(k.col_measure.points) - solver(psi, k.row_measure.points[i]))


@dataclass
class OptimizingReport:
    e: np.ndarray
    final_ok: bool
    tail_ok: bool
    tol: float = TOL_OPT

    @property
    def optimizing(self) -> bool:
        return self.final_ok and self.tail_ok

    @property
    def verdict(self) -> str:
        return "OPTIMIZING" if self.optimizing else "NOT-OPTIMIZING"


def tail_nonincreasing(values, rel: float = 0.10, abs_tol: float = TAU_LP) -> bool:
    """Last third of ``values`` is nonincreasing up to a 10% relative slack."""
    v = np.asarray(values, dtype=float)
    tail = v[len(v) - max(1, len(v) // 3):]
    return bool(np.all(tail[1:] <= (1 + rel) * tail[:-1] + abs_tol))


def check_optimizing(seq, ctx: DualContext, tol: float = TOL_OPT) -> OptimizingReport:
    """``e_n`` per step; OPTIMIZING iff the final ``e_n <= tol`` and the tail does not grow."""
    e = np.array([ctx.e(psi) for psi in seq])
    return OptimizingReport(e, bool(e[-1] <= tol), tail_nonincreasing(e), tol)


# ---------------------------------------------------------------------------
# dual optimizing sequences


class Strategy(enum.Enum):
    PERTURB = "PERTURB"
    ENTROPIC = "ENTROPIC"
    ADVERSARIAL = "ADVERSARIAL"


def default_schedule(strategy: Strategy, length: int) -> np.ndarray:
    n = np.arange(1, length + 1, dtype=float)
    if strategy is Strategy.PERTURB:
        return 2.0 ** -n
    if strategy is Strategy.ENTROPIC:
        return 10.0 ** (-1 - n / 2)
    return 2.0 ** -n


@dataclass
class SequenceSpec:
    strategy: Strategy
    length: int = 24
    schedule: np.ndarray | None = None
    seed: int = 0
    scale: float = 1.0  # PERTURB amplitude multiplier

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if self.length < 1:
            raise ValueError("sequence length must be positive")
        s = default_schedule(self.strategy, self.length) if self.schedule is None \
            else np.asarray(self.schedule, dtype=float)
        if len(s) != self.length:
            raise ValueError("schedule length differs from the sequence length")
        if np.any(s <= 0) or np.any(np.diff(s) >= 0):
            raise ValueError("schedules must be strictly positive and strictly decreasing")
        self.schedule = s


@dataclass
class GeneratedSequence:
    spec: SequenceSpec
    psis: list
    applicable: bool = True
    info: dict = field(default_factory=dict)


def lipschitz_bump(inst, seed: int, pieces: int = 3) -> ConvexPL:
    """``g(y) = max(0, max_k <u_k, y - anchor> - r_k)`` with ``|u_k| <= 1`` and ``r_k > 0``.

    ``g`` is 1-Lipschitz, convex, vanishes near the anchor and is positive on
    part of spt nu.
    """
    rng = np.random.default_rng(seed)
    anchor = inst.anchor()
    d = inst.dim
    rel = inst.nu.points - anchor
    slopes, inter = [np.zeros(d)], [0.0]
    for _ in range(pieces):
        u = rng.normal(size=d)
        u *= rng.uniform(0.5, 1.0) / np.linalg.norm(u)
        reach = float(np.max(rel @ u))
        if reach <= 0:
            u, reach = -u, float(np.max(rel @ -u))
        r = reach * rng.uniform(0.2, 0.6)
        slopes.append(u)
        inter.append(-(u @ anchor) - r)
    return ConvexPL(np.array(slopes), np.array(inter))


def gen_sequence(spec: SequenceSpec, inst, psi_hat: ConvexPL) -> GeneratedSequence:
    if spec.strategy is Strategy.PERTURB:
        return _gen_perturb(spec, inst, psi_hat)
    if spec.strategy is Strategy.ENTROPIC:
        return _gen_entropic(spec, inst, psi_hat)
    return _gen_adversarial(spec, inst, psi_hat)


def _gen_perturb(spec, inst, psi_hat):
    g = lipschitz_bump(inst, spec.seed)
    anchor = inst.anchor()
    psis = [normalize_affine(psi_hat + g.scale(spec.scale * h), anchor) for h in spec.schedule]
    return GeneratedSequence(spec, psis, info={"bump": g})


def _gen_entropic(spec, inst, psi_hat):
    from .entropic import EntropicMBB

    solver = EntropicMBB(inst)
    results = solver.path(spec.schedule)
    anchor = inst.anchor()
    y = inst.nu.points
    psis = [normalize_affine(envelope(y, r.state.psi), anchor) for r in results]
    info = {"values": np.array([r.value for r in results]),
            "residuals": np.array([r.residual for r in results]),
            "eps": spec.schedule.copy()}
    return GeneratedSequence(spec, psis, info=info)


def null_boundary_target(inst):
    """A relative-boundary edge of C with no atom of nu in its open segment.

    Returns ``(edge_endpoints, midpoint, outward unit normal)``, or ``None`` when
    no such edge exists (always the case in d = 1, where the relative boundary
    consists of the two extreme atoms).
    """
    geo = inst.geometry
    if geo.dim_affine_hull < 2:
        return None
    center = geo.hull_vertices.mean(axis=0)
    best = None
    for a, b in geo.edges():
        e = b - a
        t = (inst.nu.points - a) @ e / (e @ e)
        off = np.abs((inst.nu.points - a) @ np.array([-e[1], e[0]])) / np.linalg.norm(e)
        on_open = (off <= geo.tol) & (t > geo.tol) & (t < 1 - geo.tol)
        if on_open.any():
            continue
        n = np.array([e[1], -e[0]]) / np.linalg.norm(e)
        if n @ (a - center) < 0:
            n = -n
        if best is None or np.linalg.norm(e) > np.linalg.norm(best[0][1] - best[0][0]):
            best = ((a, b), 0.5 * (a + b), n)
    return best


def _gen_adversarial(spec, inst, psi_hat):
    """Hinge spikes ``s_n max(0, <u, y> - c_n)`` along a nu-null boundary edge.

    ``u`` is the outward normal of the edge, the active strip inside C has width
    ``w_n = diam(C) * schedule_n^2`` and the slope ``s_n = schedule_n / w_n`` grows
    without bound, so the spike equals ``schedule_n`` on the edge and blows up
    just outside C.
    """
    target = null_boundary_target(inst)
    if target is None:
        return GeneratedSequence(spec, [], applicable=False,
                                 info={"reason": "no nu-null relative-boundary region"})
    (a, b), mid, u = target
    diam = inst.geometry.diameter()
    anchor = inst.anchor()
    psis, heights, widths = [], [], []
    for h in spec.schedule:
        w = diam * h * h
        s = h / w
        c = u @ mid - w
        spike = ConvexPL(np.array([np.zeros(2), s * u]), np.array([0.0, -s * c]))
        psis.append(normalize_affine(psi_hat + spike, anchor))
        heights.append(h)
        widths.append(w)
    info = {"edge": (a, b), "target": mid, "normal": u,
            "edge_heights": np.array(heights), "widths": np.array(widths)}
    return GeneratedSequence(spec, psis, info=info)
