"""End-to-end checks of the convergence theorem and the localization lemma, plus
instance generation.

Asymptotic statements become finite certificates: "tends to 0" is a threshold
on the final index with a tail that does not grow, and "liminf >=" is a
lower bound on the tail minimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bass import Window
from .dual import (TOL_OPT, DualContext, SequenceSpec, Strategy, check_optimizing, gen_sequence,
                   tail_nonincreasing)
from .geometry import Position, compactly_contained
from .mbb import Instance, extract_dual, irreducibility, solve_primal
from .measures import DiscreteMeasure, MeasureError

TOL_LIMINF = 1e-6
TOL_L0 = 1e-4
TOL_L1 = 1e-3
SHARPNESS_LEVEL = 1.0

PASS, FAIL, NOT_EVALUATED, NOT_APPLICABLE = "PASS", "FAIL", "NOT-EVALUATED", "NOT-APPLICABLE"


class HypothesisError(ValueError):
    """The instance does not satisfy a hypothesis of the checked statement."""


class RedrawBudgetError(RuntimeError):
    pass


def _values(f, pts):
    return np.asarray(f(pts) if callable(f) else f, dtype=float)


def measure_metric(f, g, nu: DiscreteMeasure) -> float:
    """``sum_y nu(y) min(1, |f(y) - g(y)|)``; metrizes convergence in nu-measure."""
    diff = np.abs(_values(f, nu.points) - _values(g, nu.points))
    return float(nu.weights @ np.minimum(1.0, diff))


def l1_metric(f, g, nu: DiscreteMeasure) -> float:
    return float(nu.weights @ np.abs(_values(f, nu.points) - _values(g, nu.points)))


# ---------------------------------------------------------------------------
# liminf


@dataclass
class LiminfReport:
    points: np.ndarray
    positions: list
    margins: np.ndarray
    gated: np.ndarray  # points that enter the verdict (those in C)
    tol: float = TOL_LIMINF

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margins[self.gated] >= -self.tol))

    @property
    def worst(self) -> float:
        return float(self.margins[self.gated].min())


def liminf_points(inst, divisions: int = 8, outside: float = 0.25) -> np.ndarray:
    """All atoms of nu, a lattice over C and a few points outside C."""
    geo = inst.geometry
    pts = [inst.nu.points, geo.lattice(divisions)]
    if geo.dim_affine_hull > 0:
        pts.append(geo.outside_points(outside * max(geo.diameter(), 1.0)))
    return np.vstack(pts)


def liminf_check(seq, psi_hat, points, geometry=None, tol: float = TOL_LIMINF) -> LiminfReport:
    """``margin(y) = min over the last half of (psi_n(y) - psi_hat(y))``.

    Points outside C are reported but do not enter the verdict: the max-affine
    representative of the limit is only meaningful on C.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tail = seq[len(seq) // 2:] if len(seq) > 1 else seq
    base = _values(psi_hat, points)
    margins = np.min([_values(f, points) - base for f in tail], axis=0)
    if geometry is None:
        positions = [Position.INTERIOR] * len(points)
    else:
        positions = geometry.classify(points)
    gated = np.array([p is not Position.EXTERIOR for p in positions])
    return LiminfReport(points, positions, margins, gated, tol)


# ---------------------------------------------------------------------------
# theorem harness


@dataclass
class SequenceReport:
    strategy: str
    rho: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ell: np.ndarray = field(default_factory=lambda: np.zeros(0))
    e: np.ndarray = field(default_factory=lambda: np.zeros(0))
    liminf: LiminfReport | None = None
    sharpness: np.ndarray | None = None
    verdicts: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(v == FAIL for v in self.verdicts.values())


@dataclass
class Theorem1Report:
    instance: Instance
    psi_hat: object
    value: float
    compact: bool
    sequences: list

    def rows(self, instance_id: str = "instance"):
        out = []
        for rep in self.sequences:
            for check, verdict in rep.verdicts.items():
                value, thr, idx = rep.values.get(check, (np.nan, np.nan, 0))
                out.append((instance_id, f"{rep.strategy}:{check}", idx, value, thr, verdict))
        return out


def sharpness_points(inst, target, k: int = 101) -> np.ndarray:
    """Points of the open nu-null boundary edge targeted by the adversarial spikes."""
    (a, b), _, _ = target
    t = np.linspace(0.0, 1.0, k + 2)[1:-1]
    return a[None, :] + t[:, None] * (b - a)[None, :]


def theorem1_harness(inst: Instance, specs, ps=None, ctx: DualContext | None = None,
                     check_irreducible: bool = True, tol_l0: float = TOL_L0,
                     tol_l1: float = TOL_L1, tol_liminf: float = TOL_LIMINF,
                     tol_opt: float = TOL_OPT) -> Theorem1Report:
    if check_irreducible:
        irr, _, t = irreducibility(inst)
        if not irr:
            raise HypothesisError(f"instance is not irreducible (max min-mass {t:.3g})")
    ps = ps or solve_primal(inst)
    cert = extract_dual(inst, ps)
    psi_hat = cert.psi
    ctx = ctx or DualContext(inst, ps)
    compact = compactly_contained(inst.mu, inst.geometry)
    pts = liminf_points(inst)
    nu = inst.nu
    reports = []
    for spec in specs:
        gen = gen_sequence(spec, inst, psi_hat)
        rep = SequenceReport(spec.strategy.value)
        reports.append(rep)
        if not gen.applicable:
            for key in ("L0", "liminf", "L1", "optimizing", "sharpness"):
                rep.verdicts[key] = NOT_APPLICABLE
            continue
        seq = gen.psis
        n = len(seq)
        rep.rho = np.array([measure_metric(f, psi_hat, nu) for f in seq])
        rep.ell = np.array([l1_metric(f, psi_hat, nu) for f in seq])
        opt = check_optimizing(seq, ctx, tol_opt)
        rep.e = opt.e
        rep.liminf = liminf_check(seq, psi_hat, pts, inst.geometry, tol_liminf)
        l0_ok = rep.rho[-1] <= tol_l0 and tail_nonincreasing(rep.rho, abs_tol=1e-12)
        rep.verdicts["L0"] = PASS if l0_ok else FAIL
        rep.values["L0"] = (rep.rho[-1], tol_l0, n)
        rep.verdicts["liminf"] = PASS if rep.liminf.passed else FAIL
        rep.values["liminf"] = (rep.liminf.worst, -tol_liminf, n)
        if compact:
            rep.verdicts["L1"] = PASS if rep.ell[-1] <= tol_l1 else FAIL
        else:
            rep.verdicts["L1"] = NOT_EVALUATED
        rep.values["L1"] = (rep.ell[-1], tol_l1, n)
        rep.verdicts["optimizing"] = PASS if opt.optimizing else FAIL
        rep.values["optimizing"] = (opt.e[-1], opt.tol, n)
        if spec.strategy is Strategy.ADVERSARIAL:
            from .dual import null_boundary_target

            target = null_boundary_target(inst)
            spts = sharpness_points(inst, target)
            base = psi_hat(spts)
            rep.sharpness = np.array([np.max(np.abs(f(spts) - base)) for f in seq])
            ok = bool(np.all(rep.sharpness >= SHARPNESS_LEVEL))
            rep.verdicts["sharpness"] = PASS if ok else FAIL
            rep.values["sharpness"] = (float(rep.sharpness.min()), SHARPNESS_LEVEL, n)
    return Theorem1Report(inst, psi_hat, ps.value, compact, reports)


# ---------------------------------------------------------------------------
# localization lemma harness


@dataclass
class Lemma4Report:
    rho_nu: np.ndarray
    rho_parts: np.ndarray        # (n_windows, n_steps)
    masses: np.ndarray           # mu(W_j)
    converges_nu: bool
    converges_parts: list
    bound_violation: float       # max_n (rho_nu - sum_j mu(W_j) rho_j)

    @property
    def consistent(self) -> bool:
        return self.converges_nu == all(self.converges_parts)


def depth_windows(inst, j_values) -> list[np.ndarray]:
    """Masks over spt mu of ``K^j = {z in I : dist(z, I^c) >= 1/j, |z| <= j}``."""
    x = inst.mu.points
    dep = inst.geometry.depth(x)
    norm = np.linalg.norm(x, axis=1)
    return [(dep >= 1.0 / j) & (norm <= j) for j in j_values]


def covering_windows(inst, j_max: int = 10**6) -> list[np.ndarray]:
    """The first nonempty ``K^j`` and the first ``K^j`` containing all of spt mu."""
    dep = inst.geometry.depth(inst.mu.points)
    if np.any(dep <= 0):
        raise HypothesisError("mu charges the relative boundary of C")
    norm = np.linalg.norm(inst.mu.points, axis=1)
    need = np.maximum(1.0 / dep, norm)
    j_all = int(np.ceil(need.max()))
    j_first = int(np.ceil(need.min()))
    if j_all > j_max:
        raise HypothesisError("spt mu is too close to the relative boundary")
    return depth_windows(inst, sorted({max(j_first, 1), max(j_all, 1)}))


def _window_mask(inst, w) -> np.ndarray:
    if isinstance(w, Window):
        return w.contains(inst.mu.points[:, 0])
    return np.asarray(w, dtype=bool)


def lemma4_harness(inst, kernel, seq, psi_hat, windows, tol: float = TOL_L0) -> Lemma4Report:
    """Convergence in nu-measure versus convergence under every ``nu_j``.

    ``mu_j = mu(W_j & .)/mu(W_j)`` and ``nu_j = sum_x mu_j(x) pi_x``; the windows
    must cover every atom of mu.
    """
    masks = [_window_mask(inst, w) for w in windows]
    if not np.any(masks, axis=0).all():
        raise HypothesisError("the windows do not exhaust the support of mu")
    parts, masses = [], []
    k = kernel.kernel
    for mask in masks:
        if not mask.any():
            continue
        mu_j = inst.mu.restrict(mask)
        w = mu_j.weights @ k[mask]
        keep = w > 0
        parts.append(DiscreteMeasure(inst.nu.points[keep], w[keep] / w[keep].sum()))
        masses.append(inst.mu.weights[mask].sum())
    rho_nu = np.array([measure_metric(f, psi_hat, inst.nu) for f in seq])
    rho_parts = np.array([[measure_metric(f, psi_hat, p) for f in seq] for p in parts])
    masses = np.array(masses)
    bound = rho_nu - masses @ rho_parts

    def conv(r):
        return bool(r[-1] <= tol)

    return Lemma4Report(rho_nu, rho_parts, masses, conv(rho_nu), [conv(r) for r in rho_parts],
                        float(bound.max()))


class PointBump:
    """``base + height * 1{y = y0}``: a (non-convex) function differing from ``base`` at one atom."""

    def __init__(self, base, y0, height: float):
        self.base, self.y0, self.height = base, np.asarray(y0, dtype=float), height

    def __call__(self, pts):
        pts = np.atleast_2d(pts)
        hit = np.all(np.abs(pts - self.y0) <= 1e-12, axis=1)
        return _values(self.base, pts) + self.height * hit


# ---------------------------------------------------------------------------
# instances


def standard_instance(n_gauss: int = 64) -> Instance:
    """``mu = delta_0``, ``nu = (delta_{-1} + delta_{+1}) / 2`` in d = 1."""
    return Instance.create(DiscreteMeasure.dirac([0.0]),
                           DiscreteMeasure([[-1.0], [1.0]], [0.5, 0.5]), n_gauss=n_gauss)


def triangle_instance(n_gauss: int = 64, vertex_weight: float = 0.2) -> Instance:
    """``nu`` on the vertices of the unit right triangle and its centroid; ``mu = delta_centroid``."""
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    c = v.mean(axis=0)
    nu = DiscreteMeasure(np.vstack([v, c]), [vertex_weight] * 3 + [1 - 3 * vertex_weight])
    return Instance.create(DiscreteMeasure.dirac(c), nu, n_gauss=n_gauss)


def near_boundary_instance(n_gauss: int = 64) -> Instance:
    """Irreducible pair whose mu-atoms sit within the geometric tolerance of the boundary."""
    a = 1.0 - 9e-10
    return Instance.create(DiscreteMeasure([[-a], [a]], [0.5, 0.5]),
                           DiscreteMeasure([[-1.0], [1.0]], [0.5, 0.5]), n_gauss=n_gauss)


def _coarsen(nu: DiscreteMeasure, groups: np.ndarray, n_mu: int) -> DiscreteMeasure:
    pts, w = [], []
    for g in range(n_mu):
        sel = groups == g
        wg = nu.weights[sel].sum()
        pts.append(nu.weights[sel] @ nu.points[sel] / wg)
        w.append(wg)
    return DiscreteMeasure.build(np.array(pts), np.array(w))


def gen_instance(d: int, n_mu: int, n_nu: int, seed: int, n_gauss: int = 64,
                 max_redraws: int = 50, box: float = 2.0) -> Instance:
    """Random irreducible pair by conditional-mean coarsening of a random nu.

    nu has ``n_nu`` atoms uniform in ``[-box, box]^d`` with Dirichlet(1) weights;
    its atoms are split into ``n_mu`` random nonempty groups and mu puts each
    group's mass at the group barycenter, so ``mu <=_c nu``.  Reducible draws
    are discarded.
    """
    if not 1 <= n_mu <= n_nu:
        raise ValueError("need 1 <= n_mu <= n_nu")
    if n_nu < 2:
        raise ValueError("need at least two atoms of nu")
    rng = np.random.default_rng(seed)
    for _ in range(max_redraws):
        pts = np.round(rng.uniform(-box, box, size=(n_nu, d)), 6)
        w = rng.dirichlet(np.ones(n_nu))
        try:
            nu = DiscreteMeasure.build(pts, w)
        except MeasureError:
            continue
        if nu.size != n_nu:
            continue
        groups = np.concatenate([np.arange(n_mu), rng.integers(0, n_mu, n_nu - n_mu)])
        rng.shuffle(groups)
        mu = _coarsen(nu, groups, n_mu)
        inst = Instance.create(mu, nu, n_gauss=n_gauss, check=False)
        if inst.geometry.dim_affine_hull != d:
            continue
        if irreducibility(inst)[0]:
            return inst
    raise RedrawBudgetError(f"no irreducible instance after {max_redraws} draws (seed {seed})")


# ---------------------------------------------------------------------------
# negative controls


def undershoot_control(inst, psi_hat, depth: float = 0.5, length: int = 24, atom: int | None = None):
    """Constant sequence undershooting ``psi_hat`` by ``depth`` at a boundary atom.

    The envelope of ``psi_hat`` on spt nu with one boundary atom lowered is
    normalized like every generated sequence; the dip is adjusted until the
    normalized function sits exactly ``depth`` below ``psi_hat`` at that atom.
    Returns ``(sequence, atom index)``.  When every function on spt nu is affine
    (at most d + 1 atoms in general position) no such control exists.

    A normalized convex ``f`` vanishes at the anchor with centroid subgradient 0
    there, so ``f >= 0`` everywhere; the undershoot at ``y`` is therefore at most
    the normalized ``psi_hat(y)``, and atoms below ``depth`` are skipped.
    """
    from .convex import envelope, normalize_affine

    y = inst.nu.points
    if inst.nu.size <= inst.geometry.dim_affine_hull + 1:
        raise HypothesisError("every function on spt nu is affine: an undershoot is invisible mod affine")
    base = psi_hat(y)
    anchor = inst.anchor()
    if atom is None:
        pos = inst.geometry.classify(y)
        candidates = [i for i, p in enumerate(pos) if p is Position.BOUNDARY]
    else:
        candidates = [atom]
    cap = psi_hat(y) - normalize_affine(psi_hat, anchor)(y)
    for atom in candidates:
        if base[atom] - cap[atom] < depth:
            continue
        dip = depth
        for _ in range(50):
            vals = base.copy()
            vals[atom] -= dip
            f = normalize_affine(envelope(y, vals), anchor)
            under = base[atom] - f(y[atom:atom + 1])[0]
            if abs(under - depth) <= 1e-12 * (1 + depth):
                return [f] * length, atom
            dip += depth - under
    raise HypothesisError(f"no boundary atom admits a normalized undershoot of depth {depth}: "
                          "the undershoot at y is bounded by the normalized psi_hat(y)")


def bump_control(inst, psi_hat, height: float = 0.5, seed: int = 0, length: int = 24):
    """Constant non-optimizing sequence ``psi_hat + height * bump``."""
    from .dual import lipschitz_bump

    f = psi_hat + lipschitz_bump(inst, seed).scale(height)
    return [f] * length


def window_split_control(inst, kernel, psi_hat, windows, height: float = 1.0, length: int = 24):
    """Constant sequence equal to ``psi_hat`` except at one atom of nu that some
    ``nu_j`` charges and another does not; ``None`` if every ``nu_j`` has the same support."""
    masks = [_window_mask(inst, w) for w in windows]
    k = kernel.kernel
    charged = [(inst.mu.weights[m] @ k[m]) > 0 for m in masks if m.any()]
    for a in charged:
        for b in charged:
            only = np.flatnonzero(b & ~a)
            if only.size:
                f = PointBump(psi_hat, inst.nu.points[only[0]], height)
                return [f] * length
    return None
