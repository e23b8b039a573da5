import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from mbblab.bass import (Window, bass_lattice, dominated, kj_window, lemma2_report,
                         monte_carlo_stopped_moments, quantile_map, stopped_law,
                         surviving_mass)
from mbblab.geometry import hull_geometry
from mbblab.harness import gen_instance
from mbblab.measures import DiscreteMeasure as DM
from mbblab.measures import MeasureError
from mbblab.transport import check_convex_order, w2sq

from . import oracles

PM1 = DM([[-1.0], [1.0]], [0.5, 0.5])


def test_quantile_map_examples():
    g = quantile_map(DM.dirac([2.5]))
    assert np.all(g(np.linspace(-5, 5, 11)) == 2.5)
    g = quantile_map(PM1)
    z = np.array([-3.0, -0.1, 0.1, 3.0])
    assert np.array_equal(g(z), np.sign(z))
    g = quantile_map(DM([[0.0], [4.0]], [0.25, 0.75]))
    # Phi^{-1}(1/4) by root finding on the quadrature CDF
    from scipy.optimize import brentq
    cdf = lambda t: integrate.quad(stats.norm.pdf, -np.inf, t)[0]
    assert g.thresholds[0] == pytest.approx(brentq(lambda t: cdf(t) - 0.25, -3, 3), abs=1e-8)
    assert g.thresholds[0] == pytest.approx(-0.6745, abs=1e-4)
    with pytest.raises(MeasureError):
        quantile_map(DM.dirac([0.0, 0.0]))


def test_quantile_map_pushes_gaussian():
    target = DM([[-1.0], [0.5], [2.0]], [0.2, 0.5, 0.3])
    g = quantile_map(target)
    edges = np.concatenate([[-np.inf], g.thresholds, [np.inf]])
    assert np.allclose(np.diff(stats.norm.cdf(edges)), target.weights[np.argsort(target.points[:, 0])])


def test_dirac_chain_constant():
    ch = bass_lattice(0.7, DM.dirac([0.7]), 8, 8)
    assert all(np.all(v == 0.7) for v in ch.values)
    assert ch.terminal_law() == DM.dirac([0.7])


def test_two_point_chain_terminal_law():
    x = 0.3
    target = DM([[x - 1], [x + 1]], [0.5, 0.5])
    ch = bass_lattice(x, target, 16, 16)
    term = ch.terminal_law()
    assert w2sq(term, target).via_lp <= 0.05 ** 2
    assert ch.martingale_error() <= 1e-12 and ch.row_sum_error() <= 1e-12


@settings(max_examples=25)
@given(st.integers(0, 10**6), st.integers(2, 6), st.sampled_from([8, 16, 32]))
def test_chain_invariants(seed, n, m):
    rng = np.random.default_rng(seed)
    pts = np.unique(rng.uniform(-3, 3, size=n).round(4))
    target = DM.build(pts[:, None], rng.uniform(0.1, 1, len(pts)))
    x = float(target.barycenter()[0])
    ch = bass_lattice(x, target, m, 16)
    assert ch.martingale_error() <= 1e-12
    assert ch.row_sum_error() <= 1e-12
    term = ch.terminal_law()
    assert np.allclose(term.weights, target.weights, atol=1e-12)


def test_barycenter_precondition():
    with pytest.raises(MeasureError):
        bass_lattice(0.5, PM1)


def test_kj_window_examples():
    geo = hull_geometry(PM1)
    assert (kj_window(geo, 2).lo, kj_window(geo, 2).hi) == (-0.5, 0.5)
    assert (kj_window(geo, 1).lo, kj_window(geo, 1).hi) == (0.0, 0.0)
    geo = hull_geometry(DM([[0.0], [10.0]], [0.5, 0.5]))
    w = kj_window(geo, 4)
    assert (w.lo, w.hi) == (0.25, 4.0)
    geo = hull_geometry(DM([[0.0], [0.1]], [0.5, 0.5]))
    assert kj_window(geo, 2).empty and "EMPTY" in str(kj_window(geo, 2))


def test_windows_nested_and_covering():
    geo = hull_geometry(DM([[-2.0], [3.0]], [0.6, 0.4]))
    ws = [kj_window(geo, j) for j in range(1, 60)]
    for a, b in zip(ws, ws[1:]):
        if not a.empty:
            assert b.lo <= a.lo and a.hi <= b.hi
    assert ws[-1].lo < -2 + 0.02 and ws[-1].hi > 3 - 0.02


def test_stopped_law_examples():
    ch = bass_lattice(0.0, PM1, 32, 32)
    big = Window(99, -5.0, 5.0)
    assert stopped_law(ch, big) == ch.terminal_law()
    outside = Window(1, 0.5, 0.9)
    assert stopped_law(ch, outside) == DM.dirac([0.0])
    w = Window(2, -0.5, 0.5)
    p = stopped_law(ch, w)
    assert abs(p.barycenter()[0]) <= 1e-12
    assert p == p.sign_flip() or np.allclose(np.sort(p.points[:, 0]), -np.sort(p.points[:, 0])[::-1])
    assert check_convex_order(p, PM1)
    assert 0.0 <= surviving_mass(ch, w) < 1.0


def test_stopping_monotone():
    target = DM([[-1.0], [0.2], [1.5]], [0.3, 0.4, 0.3])
    x = float(target.barycenter()[0])
    ch = bass_lattice(x, target, 32, 32)
    geo = hull_geometry(target)
    laws = [stopped_law(ch, kj_window(geo, j)) for j in range(1, 9)]
    for a, b in zip(laws, laws[1:]):
        assert dominated(a, b)
        assert oracles.call_prices_dominated(a.points[:, 0], a.weights, b.points[:, 0],
                                             b.weights, tol=1e-10)
    for p in laws:
        assert abs(p.barycenter()[0] - x) <= 1e-12


def test_monte_carlo_oracle_mean():
    """The lattice DP and Brownian paths agree in mean within 3 standard errors.

    The second moment carries a lattice bias of about 1.6e-3 (the random walk
    exits a discretized window differently from continuous paths), so it is
    compared at that scale.
    """
    w = Window(2, -0.5, 0.5)
    ch = bass_lattice(0.0, PM1, 32, 32)
    p = stopped_law(ch, w)
    mean, sm, se = monte_carlo_stopped_moments(0.0, PM1, w, m=32, n_paths=100_000, seed=1)
    assert abs(mean - p.barycenter()[0]) <= 3 * se[0]
    assert abs(sm - p.second_moment()) <= 3 * se[1] + 2.5e-3


@pytest.fixture(scope="module")
def std_report(std):
    inst, ps, _ = std
    return lemma2_report(inst, ps, J=8)


def test_lemma2_report_rows(std_report):
    rep = std_report
    assert rep.applicable
    checks = {r.check for r in rep.rows}
    assert {"chain_martingale", "support", "barycenter", "convex_order_next",
            "mcov_monotone", "w2_nonincreasing", "w2_final"} <= checks
    fails = {r.check for r in rep.failures()}
    assert fails <= {"w2_final"}
    # survival at t = 1 grows with j
    s = rep.survival[0]
    assert all(b >= a - 1e-12 for a, b in zip(s, s[1:]))


def test_lemma2_dirac_rows_pass():
    nu = DM([[-1.0], [0.0], [1.0]], [0.25, 0.5, 0.25])
    from mbblab.mbb import Instance, solve_primal

    inst = Instance.create(DM([[-1.0], [0.0], [1.0]], [0.25, 0.5, 0.25]), nu, n_gauss=16)
    rep = lemma2_report(inst, solve_primal(inst), J=4, m=8, k=8)
    assert rep.passed


def test_lemma2_not_applicable_2d(tri):
    inst, ps, _ = tri
    assert not lemma2_report(inst, ps).applicable


@pytest.mark.parametrize("seed", [0, 1])
def test_lemma2_generated_order_chain(seed):
    from mbblab.mbb import solve_primal

    inst = gen_instance(1, 2, 5, seed, n_gauss=16)
    rep = lemma2_report(inst, solve_primal(inst), J=4, m=16, k=16)
    assert {r.check for r in rep.failures()} <= {"w2_final"}
