"""One-dimensional Bass martingale from a Dirac start on a time lattice, exit windows,
and stopped kernels.

The chain is ``M_t = E[g(B_1) | B_t]`` for a lattice random walk ``B`` with
quantized Gaussian increments and the comonotone map ``g`` pushing the lattice
law of ``B_1`` onto the target.  Values at earlier times come from exact
backward conditional expectations, so every one-step transition has mean equal
to its starting value up to floating-point rounding, and the terminal law is
the target exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .lp import TAU_LP
from .measures import DiscreteMeasure, MeasureError
from .transport import check_convex_order, convex_order_1d, mcov_1d, w2_1d

# largest pair size for which the convex-order LP is run instead of the potential test
LP_PAIR_LIMIT = 40_000


# ---------------------------------------------------------------------------
# quantile map


@dataclass(frozen=True)
class StepMap:
    """Right-continuous nondecreasing step function ``g(z) = values[#(thresholds <= z)]``."""

    thresholds: np.ndarray
    values: np.ndarray

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return self.values[np.searchsorted(self.thresholds, z, side="right")]


def quantile_map(pi_x: DiscreteMeasure) -> StepMap:
    """``g = F^{-1} o Phi``: pushes the standard normal law onto ``pi_x``."""
    if pi_x.dim != 1:
        raise MeasureError("quantile_map needs d = 1")
    order = np.argsort(pi_x.points[:, 0])
    vals = pi_x.points[order, 0]
    cum = np.cumsum(pi_x.weights[order])[:-1]
    return StepMap(norm.ppf(np.clip(cum, 0.0, 1.0)), vals)


# ---------------------------------------------------------------------------
# lattice chain


@dataclass
class LatticeMartingale:
    """Value chain over the lattice walk ``B``.

    ``values[i][j]`` is the state value at time ``t_i`` and lattice position
    ``offset_i + j``.  Steps ``0 .. m-1`` move position by ``l in {-L..L}`` with
    probability ``step_weights[l + L]``.  The last step also draws a terminal
    atom ``a`` with probability ``split[j, a]`` given the terminal position,
    and the terminal value is ``atoms[a]``.
    """

    x: float
    times: np.ndarray
    step_weights: np.ndarray
    values: list
    split: np.ndarray
    atoms: np.ndarray
    delta: float

    @property
    def m(self) -> int:
        return len(self.times) - 1

    @property
    def L(self) -> int:
        return (len(self.step_weights) - 1) // 2

    def row_sum_error(self) -> float:
        e1 = abs(self.step_weights.sum() - 1.0)
        e2 = np.abs(self.split.sum(axis=1) - 1.0).max()
        return float(max(e1, e2))

    def martingale_error(self) -> float:
        """``max |E[M_{i+1} | M_i = s] - s|`` over all states."""
        w = self.step_weights
        err = 0.0
        for i in range(self.m):
            nxt = self.values[i + 1] if i + 1 < self.m else self.split @ self.atoms
            mean = np.convolve(nxt, w[::-1], mode="valid")
            err = max(err, float(np.abs(mean - self.values[i]).max()))
        return err

    def terminal_law(self) -> DiscreteMeasure:
        p = np.array([1.0])
        for _ in range(self.m):
            p = np.convolve(p, self.step_weights)
        return DiscreteMeasure.build(self.atoms[:, None], p @ self.split)

    def max_jump(self, i: int) -> float:
        """Largest one-step move of the value chain from time ``t_i``."""
        L = self.L
        cur = self.values[i]
        if i + 1 == self.m:
            # the last step can reach any terminal atom
            return float(np.max(np.abs(cur[:, None] - self.atoms[None, :])))
        nxt = self.values[i + 1]
        win = np.lib.stride_tricks.sliding_window_view(nxt, 2 * L + 1)
        return float(np.max(np.abs(win - cur[:, None])))


def gaussian_steps(m: int, k: int) -> tuple[np.ndarray, float]:
    """Symmetric discretized N(0, 1/m) on ``2L+1`` points ``{-L..L} * delta`` with ``L = k // 2``."""
    L = max(1, k // 2)
    sd = np.sqrt(1.0 / m)
    delta = 4.0 * sd / L
    l = np.arange(-L, L + 1)
    w = np.exp(-0.5 * (l * delta / sd) ** 2)
    w = 0.5 * (w + w[::-1])
    return w / w.sum(), delta


def bass_lattice(x: float, pi_x: DiscreteMeasure, m: int = 32, k: int = 32) -> LatticeMartingale:
    if pi_x.dim != 1:
        raise MeasureError("bass_lattice needs d = 1")
    if abs(pi_x.barycenter()[0] - x) > 1e-10:
        raise MeasureError(f"barycenter {pi_x.barycenter()[0]} differs from x = {x}")
    w, delta = gaussian_steps(m, k)
    L = len(w) // 2
    p1 = np.array([1.0])
    for _ in range(m):
        p1 = np.convolve(p1, w)
    order = np.argsort(pi_x.points[:, 0])
    atoms = pi_x.points[order, 0]
    split = _comonotone_split(p1, pi_x.weights[order])
    values = [None] * m
    # values at t_{m-1}, ..., t_0 from exact backward conditional expectations
    # conditional expectations of the atoms lie in their hull; clip the round-off
    nxt = np.clip(split @ atoms, atoms[0], atoms[-1])
    for i in range(m - 1, -1, -1):
        nxt = np.clip(np.convolve(nxt, w[::-1], mode="valid"), atoms[0], atoms[-1])
        values[i] = nxt
    times = np.linspace(0.0, 1.0, m + 1)
    ch = LatticeMartingale(float(x), times, w, values, split, atoms, delta)
    assert len(values[0]) == 1 and 2 * L * m + 1 == len(p1)
    return ch


def _comonotone_split(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-stochastic ``S`` with ``p @ S = q`` pairing the two laws in increasing order."""
    S = np.zeros((len(p), len(q)))
    cp = np.concatenate([[0.0], np.cumsum(p)])
    cq = np.concatenate([[0.0], np.cumsum(q)])
    cp /= cp[-1]
    cq /= cq[-1]
    for a in range(len(q)):
        lo = np.maximum(cp[:-1], cq[a])
        hi = np.minimum(cp[1:], cq[a + 1])
        S[:, a] = np.maximum(hi - lo, 0.0)
    rows = S.sum(axis=1)
    nz = rows > 0
    S[nz] /= rows[nz, None]
    # positions of zero lattice mass (underflow) follow the nearest charged row
    if not nz.all():
        idx = np.flatnonzero(nz)
        near = idx[np.clip(np.searchsorted(idx, np.arange(len(p))), 0, len(idx) - 1)]
        S[~nz] = S[near[~nz]]
    return S


# ---------------------------------------------------------------------------
# windows and stopping


@dataclass(frozen=True)
class Window:
    j: int
    lo: float
    hi: float

    @property
    def empty(self) -> bool:
        return self.lo > self.hi

    def contains(self, v, tol: float = 0.0):
        v = np.asarray(v, dtype=float)
        return (v >= self.lo - tol) & (v <= self.hi + tol)

    def __str__(self):
        return f"K^{self.j} = EMPTY" if self.empty else f"K^{self.j} = [{self.lo:.6g}, {self.hi:.6g}]"


def kj_window(geo, j: int) -> Window:
    """``{z in I : dist(z, I^c) >= 1/j, |z| <= j}`` for ``I = (lo, hi)``."""
    if geo.dim != 1 or geo.dim_affine_hull != 1:
        raise MeasureError("kj_window needs a nondegenerate interval I in d = 1")
    lo, hi = float(geo.hull_vertices[0, 0]), float(geo.hull_vertices[1, 0])
    return Window(j, max(lo + 1.0 / j, -float(j)), min(hi - 1.0 / j, float(j)))


def stopped_law(chain: LatticeMartingale, w: Window) -> DiscreteMeasure:
    """Law of ``M`` at the first lattice time it leaves ``w`` (or at t = 1)."""
    if w.empty or not w.contains(chain.x):
        return DiscreteMeasure.dirac([chain.x])
    stopped_vals, stopped_mass = [], []
    alive = np.array([1.0])
    for i in range(chain.m):
        v = chain.values[i]
        out = ~w.contains(v)
        if out.any():
            stopped_vals.append(v[out])
            stopped_mass.append(alive[out])
            alive = np.where(out, 0.0, alive)
        alive = np.convolve(alive, chain.step_weights)
    stopped_vals.append(chain.atoms)
    stopped_mass.append(alive @ chain.split)
    vals = np.concatenate(stopped_vals)
    mass = np.concatenate(stopped_mass)
    return DiscreteMeasure.build(vals[:, None], mass)


def surviving_mass(chain: LatticeMartingale, w: Window) -> float:
    """Probability that the chain never leaves ``w`` before t = 1."""
    if w.empty or not w.contains(chain.x):
        return 0.0
    alive = np.array([1.0])
    for i in range(chain.m):
        alive = np.where(w.contains(chain.values[i]), alive, 0.0)
        alive = np.convolve(alive, chain.step_weights)
    return float(alive.sum())


def monte_carlo_stopped_moments(x, pi_x: DiscreteMeasure, w: Window, m: int = 32,
                                n_paths: int = 100_000, seed: int = 0):
    """Sanity oracle: continuous-space Brownian paths with the same quantile map.

    Returns ``(mean, second moment, their standard errors)`` of the stopped value.
    """
    g = quantile_map(pi_x)
    rng = np.random.default_rng(seed)
    dt = 1.0 / m
    b = np.zeros(n_paths)
    theta = np.concatenate([[-np.inf], g.thresholds, [np.inf]])

    def value(b, t):
        if t >= 1.0:
            return g(b)
        s = np.sqrt(1.0 - t)
        cdf = norm.cdf((theta[None, :] - b[:, None]) / s)
        return np.diff(cdf, axis=1) @ g.values

    out = np.full(n_paths, np.nan)
    alive = np.ones(n_paths, dtype=bool)
    if not w.contains(x):
        out[:] = x
        alive[:] = False
    for i in range(m + 1):
        t = i * dt
        if not alive.any():
            break
        v = value(b[alive], t)
        idx = np.flatnonzero(alive)
        leave = ~w.contains(v) if i < m else np.ones(len(v), dtype=bool)
        out[idx[leave]] = v[leave]
        alive[idx[leave]] = False
        b += rng.normal(scale=np.sqrt(dt), size=n_paths)
    se = np.sqrt(np.array([out.var(), (out ** 2).var()]) / n_paths)
    return float(out.mean()), float((out ** 2).mean()), se


# ---------------------------------------------------------------------------
# report


@dataclass
class CheckRow:
    x_index: int
    j: int
    check: str
    value: float
    threshold: float
    passed: bool


@dataclass
class Lemma2Report:
    rows: list = field(default_factory=list)
    applicable: bool = True
    w2: dict = field(default_factory=dict)
    survival: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list:
        return [r for r in self.rows if not r.passed]


def dominated(a: DiscreteMeasure, b: DiscreteMeasure, tol: float = 1e-10) -> bool:
    """``a <=_c b`` by the transport LP when small, else by the exact 1D potential test."""
    if a.size * b.size <= LP_PAIR_LIMIT:
        return bool(check_convex_order(a, b))
    return convex_order_1d(a, b, tol)


def lemma2_report(inst, ps, J: int = 8, m: int = 32, k: int = 32,
                  w2_target: float = 0.1, lattice_tol: float = 1e-9) -> Lemma2Report:
    """Stopped kernels ``pi^j_x`` for ``j = 1..J`` and every atom of mu, with the checks
    support, convex-order chain, mcov chain, W2 decay and Dirac absorption."""
    rep = Lemma2Report()
    if inst.dim != 1 or inst.geometry.dim_affine_hull != 1:
        rep.applicable = False
        return rep
    gamma = inst.gamma
    windows = [kj_window(inst.geometry, j) for j in range(1, J + 1)]
    for i, x in enumerate(inst.mu.points[:, 0]):
        row = ps.sbm_kernel.kernel[i]
        pi_x = DiscreteMeasure.build(inst.nu.points, np.where(row > 1e-14, row, 0.0))
        # the pruned kernel keeps its mean up to ~1e-14; recenter the chain on it
        xb = float(pi_x.barycenter()[0])
        chain = bass_lattice(xb, pi_x, m, k)
        add = rep.rows.append
        add(CheckRow(i, 0, "chain_martingale", chain.martingale_error(), 1e-12,
                     chain.martingale_error() <= 1e-12))
        add(CheckRow(i, 0, "chain_rows", chain.row_sum_error(), 1e-12, chain.row_sum_error() <= 1e-12))
        laws = [stopped_law(chain, w) for w in windows]
        full = mcov_1d(pi_x, gamma)
        mc = [mcov_1d(p, gamma) for p in laws]
        w2s = [w2_1d(p, pi_x) for p in laws]
        rep.w2[i] = w2s
        rep.survival[i] = [surviving_mass(chain, w) for w in windows]
        jump = max(chain.max_jump(t) for t in range(m))
        for j, (w, p) in enumerate(zip(windows, laws), start=1):
            inside = (not w.empty) and bool(w.contains(xb))
            if not inside:
                ok = p == DiscreteMeasure.dirac([xb])
                add(CheckRow(i, j, "dirac_absorption", 0.0 if ok else 1.0, 0.0, ok))
            else:
                excess = float(np.max(np.maximum(w.lo - p.points[:, 0], p.points[:, 0] - w.hi)))
                excess = max(excess, 0.0)
                add(CheckRow(i, j, "support", excess, jump, excess <= jump + 1e-12))
            dev = abs(p.barycenter()[0] - xb)
            add(CheckRow(i, j, "barycenter", dev, 1e-12, dev <= 1e-12))
            nxt = laws[j] if j < J else pi_x
            order_ok = dominated(p, nxt)
            add(CheckRow(i, j, "convex_order_next", float(not order_ok), 0.0, order_ok))
            order_full = dominated(p, pi_x)
            add(CheckRow(i, j, "convex_order_target", float(not order_full), 0.0, order_full))
            m_next = mc[j] if j < J else full
            gap = mc[j - 1] - m_next
            add(CheckRow(i, j, "mcov_monotone", gap, TAU_LP + lattice_tol,
                         gap <= TAU_LP + lattice_tol and mc[j - 1] >= -TAU_LP))
            if j > 1:
                inc = w2s[j - 1] - w2s[j - 2]
                add(CheckRow(i, j, "w2_nonincreasing", inc, lattice_tol, inc <= lattice_tol))
        add(CheckRow(i, J, "w2_final", w2s[-1], w2_target, w2s[-1] <= w2_target))
    return rep
