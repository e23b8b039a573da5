import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mbblab.lp import TAU_LP
from mbblab.measures import DiscreteMeasure as DM
from mbblab.measures import MeasureError, quantize_gaussian
from mbblab.transport import (ConvexOrderError, Coupling, MartingaleTransport,
                              check_convex_order, convex_order_1d, mcov, mcov_1d,
                              mean_preserving_split, strassen_extend, verify_mcov_chain,
                              w2sq)

from . import oracles
from .strategies import measures, split_pairs

PM1 = DM([[-1.0], [1.0]], [0.5, 0.5])


def _o(m):
    return m.points, m.weights


# ----------------------------------------------------------------- convex order

def test_convex_order_examples():
    res = check_convex_order(DM.dirac([0.0]), PM1)
    assert res and np.allclose(res.witness.kernel[0], [0.5, 0.5])
    res = check_convex_order(DM.dirac([1.0]), PM1)
    assert not res and res.certificate is not None
    assert "not in convex order" in res.summary()
    mu = DM([[-0.5], [0.5]], [0.5, 0.5])
    nu = DM([[-1.0], [0.0], [1.0]], [1 / 3] * 3)
    res = check_convex_order(mu, nu)
    assert res and res.witness.is_valid()
    assert oracles.kernel_vertices_mt(mu.points, mu.weights, nu.points, nu.weights)


@given(measures(d=1, max_size=4), measures(d=1, max_size=4))
def test_convex_order_agrees_with_oracles(a, b):
    res = bool(check_convex_order(a, b))
    assert res == oracles.martingale_feasible(*_o(a), *_o(b))
    assert res == oracles.call_prices_dominated(a.points[:, 0], a.weights, b.points[:, 0],
                                                b.weights, tol=1e-9)
    assert res == convex_order_1d(a, b)


@given(measures(d=2, max_size=4))
def test_convex_order_reflexive_with_identity(m):
    res = check_convex_order(m, m)
    assert res
    assert np.allclose(res.witness.mass, np.diag(m.weights), atol=TAU_LP)


@given(measures(d=2, max_size=4), measures(d=2, max_size=4))
def test_convex_order_implies_moments(a, b):
    if check_convex_order(a, b):
        assert np.allclose(a.barycenter(), b.barycenter(), atol=TAU_LP)
        assert a.second_moment() <= b.second_moment() + TAU_LP


# ----------------------------------------------------------------- mcov and W2

def test_mcov_examples():
    zeta = DM([[1.0], [2.0], [6.0]], [0.2, 0.3, 0.5])
    assert mcov(DM.dirac([3.0]), zeta)[0] == pytest.approx(3.0 * zeta.barycenter()[0], abs=TAU_LP)
    assert mcov_1d(DM.dirac([3.0]), zeta) == pytest.approx(3.0 * zeta.barycenter()[0], abs=1e-12)
    c = oracles.half_normal_mean()
    q = DM([[-c], [c]], [0.5, 0.5])
    # one free coupling parameter t: value c(4t - 1)
    brute = max(c * (4 * t - 1) for t in np.linspace(0, 0.5, 201))
    assert mcov(PM1, q)[0] == pytest.approx(brute, abs=TAU_LP)
    u = DM([[1.0], [2.0], [3.0]], [1 / 3] * 3)
    assert mcov_1d(u, u) == pytest.approx(14 / 3, abs=1e-12)
    assert mcov(u, u)[0] == pytest.approx(u.second_moment(), abs=TAU_LP)


def test_mcov_returns_optimal_coupling():
    p = DM([[0.0, 1.0], [2.0, -1.0], [1.0, 1.0]], [0.2, 0.5, 0.3])
    q = DM([[1.0, 0.0], [0.0, 2.0]], [0.6, 0.4])
    val, cpl = mcov(p, q)
    assert cpl.is_valid()
    assert cpl.integrate(p.points @ q.points.T) == pytest.approx(val, abs=TAU_LP)
    assert val == pytest.approx(oracles.mcov_lp(p.points, p.weights, q.points, q.weights), abs=1e-8)


def test_mcov_1d_rejects_2d():
    with pytest.raises(MeasureError):
        mcov_1d(DM.dirac([0.0, 0.0]), DM.dirac([0.0, 0.0]))


@pytest.mark.parametrize("seed", range(50))
def test_mcov_1d_matches_lp(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 8, size=2)
    p = DM.build(rng.normal(size=(n, 1)).round(4), rng.uniform(0.1, 1, n))
    q = DM.build(rng.normal(size=(m, 1)).round(4), rng.uniform(0.1, 1, m))
    assert mcov_1d(p, q) == pytest.approx(mcov(p, q)[0], abs=1e-8)
    assert mcov_1d(p, q) == pytest.approx(oracles.quantile_mcov_1d(p.points[:, 0], p.weights,
                                                                   q.points[:, 0], q.weights), abs=1e-10)


@given(measures(d=2), measures(d=2))
def test_mcov_invariants(p, q):
    v = mcov(p, q)[0]
    assert abs(v - mcov(q, p)[0]) <= TAU_LP
    assert v >= p.barycenter() @ q.barycenter() - TAU_LP
    assert v <= 0.5 * (p.second_moment() + q.second_moment()) + TAU_LP
    assert v == pytest.approx(oracles.mcov_lp(p.points, p.weights, q.points, q.weights),
                              abs=1e-7 * (1 + abs(v)))


@given(measures(d=2), measures(d=2))
def test_quadratic_identity(p, q):
    r = w2sq(p, q)
    assert r.discrepancy <= 1e-8
    assert r.via_lp == pytest.approx(oracles.w2sq_lp(p.points, p.weights, q.points, q.weights),
                                     abs=1e-7 * (1 + r.via_lp))


def test_w2_examples():
    p = DM([[0.0, 1.0], [2.0, 0.5]], [0.3, 0.7])
    assert w2sq(p, p).via_lp == pytest.approx(0.0, abs=TAU_LP)
    assert w2sq(p, p).via_mcov == pytest.approx(0.0, abs=TAU_LP)
    r = w2sq(DM.dirac([1.0, 2.0]), DM.dirac([4.0, -2.0]))
    assert r.via_lp == pytest.approx(25.0) and r.via_mcov == pytest.approx(25.0)


@given(split_pairs(d=1), measures(d=1))
def test_mcov_monotone_in_convex_order(pair, zeta):
    alpha, beta, _ = pair
    assert mcov(alpha, zeta)[0] <= mcov(beta, zeta)[0] + TAU_LP


# ----------------------------------------------------------------- Strassen / chain

def test_strassen_identity_kernel():
    a = DM([[0.0], [1.0], [3.0]], [0.2, 0.3, 0.5])
    z = DM([[-1.0], [2.0]], [0.5, 0.5])
    pi2 = Coupling(a, z, np.outer(a.weights, z.weights))
    t = strassen_extend(MartingaleTransport.identity(a), pi2)
    assert t.martingale_deviation() == 0.0
    for av, bv, _, w in t.support():
        assert np.array_equal(av, bv)


def test_strassen_four_atoms():
    a = DM.dirac([0.0])
    pi1 = MartingaleTransport(a, PM1, [[0.5, 0.5]])
    pi2 = Coupling(a, PM1, [[0.5, 0.5]])
    t = strassen_extend(pi1, pi2)
    sup = t.support()
    assert len(sup) == 4 and all(w == 0.25 for *_, w in sup)
    assert np.allclose(t.conditional_mean_b()[0, :, 0], 0.0)


def test_strassen_rejects_mismatch():
    a = DM.dirac([0.0])
    pi1 = MartingaleTransport(a, PM1, [[0.5, 0.5]])
    pi2 = Coupling(DM.dirac([1.0]), PM1, [[0.5, 0.5]])
    with pytest.raises(MeasureError):
        strassen_extend(pi1, pi2)


@given(split_pairs(d=2), measures(d=2), st.integers(0, 1000))
def test_strassen_marginals_and_mean(pair, zeta, seed):
    alpha, beta, pi1 = pair
    rng = np.random.default_rng(seed)
    k = rng.random((alpha.size, zeta.size))
    # any coupling of alpha with some measure; rebuild zeta from its column sums
    mass = alpha.weights[:, None] * k / k.sum(axis=1, keepdims=True)
    zz = DM(zeta.points[:zeta.size], mass.sum(axis=0) / mass.sum())
    pi2 = Coupling(alpha, zz, mass)
    t = strassen_extend(pi1, pi2)
    assert np.max(np.abs(t.marginal_ab() - pi1.mass)) <= 1e-12
    assert np.max(np.abs(t.marginal_az() - pi2.mass)) <= 1e-12
    assert t.martingale_deviation() <= 1e-12
    assert t.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_chain_examples():
    zero_mean = DM([[-2.0], [1.0]], [1 / 3, 2 / 3])
    r = verify_mcov_chain(DM.dirac([0.0]), PM1, zero_mean)
    assert r.terms[0] == 0.0 and r.terms[1] == pytest.approx(0.0, abs=TAU_LP) and r.passed
    r = verify_mcov_chain(DM.dirac([0.0]), PM1, PM1)
    # bound term is (sm beta + sm zeta)/2 = 1, attained by the comonotone pairing
    assert np.allclose(r.terms, [0.0, 0.0, 1.0, 1.0], atol=TAU_LP)
    assert r.passed


def test_chain_rejects_non_dominated():
    with pytest.raises(ConvexOrderError):
        verify_mcov_chain(DM.dirac([1.0]), PM1, PM1)


@pytest.mark.parametrize("seed", range(100))
def test_chain_randomized(seed):
    rng = np.random.default_rng(seed)
    d = 1 + seed % 2
    n = rng.integers(1, 4)
    alpha = DM.build(rng.normal(size=(n, d)).round(4), rng.uniform(0.1, 1, n))
    beta, _ = mean_preserving_split(alpha, rng)
    zeta = DM.build(rng.normal(size=(3, d)).round(4), rng.uniform(0.1, 1, 3))
    assert verify_mcov_chain(alpha, beta, zeta).passed


def test_gaussian_quantization_mcov_against_pm1():
    g = quantize_gaussian(1, 64)
    assert mcov(PM1, g)[0] == pytest.approx(mcov_1d(PM1, g), abs=1e-10)
