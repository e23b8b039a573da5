import numpy as np
import pytest

from mbblab.convex import ConvexPL, envelope
from mbblab.dual import (DualContext, PhiDomainError, PhiSolver, SequenceSpec, Strategy,
                         D_of, L_of, check_optimizing, gen_sequence, lipschitz_bump,
                         null_boundary_target, phi_grid, phi_psi, phi_psi_dual_1d,
                         tail_nonincreasing)
from mbblab.harness import gen_instance, standard_instance
from mbblab.lp import TAU_LP
from mbblab.mbb import Instance, extract_dual, sample_mt, solve_primal
from mbblab.measures import DiscreteMeasure as DM
from mbblab.measures import quantize_gaussian
from mbblab.transport import MartingaleTransport

from . import oracles


@pytest.fixture(scope="module")
def std_ctx(std):
    inst, ps, cert = std
    return DualContext(inst, ps)


@pytest.fixture(scope="module")
def gen_cases():
    out = []
    for s, d in [(0, 1), (1, 1), (2, 2)]:
        inst = gen_instance(d, 2, 6, s, n_gauss=16)
        ps = solve_primal(inst)
        out.append((inst, ps, extract_dual(inst, ps), DualContext(inst, ps, divisions=8)))
    return out


# ----------------------------------------------------------------- phi

def test_phi_zero_at_zero_brute_force():
    g = quantize_gaussian(1, 8)
    Y = np.array([[-1.0], [0.0], [1.0]])
    zero = ConvexPL.zero(1)
    val = phi_psi(zero, [0.0], g, Y)
    assert val <= 0
    assert val == pytest.approx(oracles.phi_lp(np.zeros(3), Y, g.points, g.weights, [0.0]), abs=1e-8)
    assert val == pytest.approx(phi_psi_dual_1d(zero, 0.0, g, Y), abs=1e-8)
    # brute force: p = (a, 1-2a, a), comonotone pairing with gamma
    best = max(-oracles.quantile_mcov_1d(Y[:, 0], [a, 1 - 2 * a, a], g.points[:, 0], g.weights)
               for a in np.linspace(1e-9, 0.5, 2001))
    assert val == pytest.approx(-max(oracles.quantile_mcov_1d(
        Y[:, 0], [a, 1 - 2 * a, a], g.points[:, 0], g.weights) for a in np.linspace(0, 0.5, 2001)),
        abs=1e-6)
    assert best <= 0


def test_phi_affine_psi():
    g = quantize_gaussian(1, 8)
    Y = np.linspace(-1, 1, 5)[:, None]
    a, b = 0.7, -0.2
    aff = ConvexPL.affine([a], b)
    zero = ConvexPL.zero(1)
    for x in [-0.5, 0.0, 0.3]:
        # an affine psi integrates to a x + b against any p with barycenter x
        assert phi_psi(aff, [x], g, Y) == pytest.approx(a * x + b + phi_psi(zero, [x], g, Y), abs=1e-9)


def test_phi_outside_grid_rejected():
    g = quantize_gaussian(1, 4)
    with pytest.raises(PhiDomainError):
        phi_psi(ConvexPL.zero(1), [2.0], g, np.array([[-1.0], [1.0]]))


@pytest.mark.parametrize("seed", range(8))
def test_phi_two_routes_1d(seed):
    rng = np.random.default_rng(seed)
    g = quantize_gaussian(1, 6)
    Y = np.sort(rng.uniform(-2, 2, size=6))[:, None]
    psi = ConvexPL(rng.normal(size=(3, 1)), rng.normal(size=3))
    x = rng.uniform(Y[0, 0], Y[-1, 0])
    v = phi_psi(psi, [x], g, Y)
    assert v == pytest.approx(phi_psi_dual_1d(psi, x, g, Y), abs=1e-8)
    assert v == pytest.approx(oracles.phi_lp(psi(Y), Y, g.points, g.weights, [x]), abs=1e-7)
    assert v == pytest.approx(oracles.phi_kinks_1d(psi(Y), Y[:, 0], g.points[:, 0], g.weights, x),
                              abs=1e-8)


def test_phi_below_psi_on_grid(gen_cases):
    for inst, ps, cert, ctx in gen_cases:
        psi = cert.psi + lipschitz_bump(inst, 3)
        for y in ctx.Y[:: max(1, len(ctx.Y) // 6)]:
            assert ctx.solver(psi, y) <= psi.value(y) + TAU_LP


def test_phi_hat_two_routes(gen_cases, std):
    for inst, ps, cert, ctx in gen_cases + [(*std, DualContext(std[0], std[1]))]:
        assert np.allclose(ctx.phi(cert.psi), cert.phi_hat, atol=1e-7)


def test_grid_refinement_only_lowers_phi(std):
    inst, ps, cert = std
    psi = cert.psi + lipschitz_bump(inst, 1)
    coarse = PhiSolver(inst.gamma, phi_grid(inst, 4))
    fine = PhiSolver(inst.gamma, phi_grid(inst, 16))
    x = inst.mu.points[0]
    assert fine(psi, x) <= coarse(psi, x) + TAU_LP


# ----------------------------------------------------------------- D and L

def test_D_mu_equals_nu_nonnegative():
    nu = DM([[-1.0], [0.5], [2.0]], [0.3, 0.5, 0.2])
    inst = Instance.create(nu, nu, n_gauss=8)
    ident = MartingaleTransport.identity(nu)
    Y = phi_grid(inst, 8)
    rng = np.random.default_rng(0)
    for _ in range(5):
        psi = ConvexPL(rng.normal(size=(3, 1)), rng.normal(size=3))
        assert D_of(psi, ident, inst.gamma, Y) >= -TAU_LP


def test_D_at_optimum_and_affine_invariance(gen_cases, std, std_ctx):
    cases = gen_cases + [(*std, std_ctx)]
    rng = np.random.default_rng(5)
    for inst, ps, cert, ctx in cases:
        assert ctx.D(cert.psi) == pytest.approx(ps.value, abs=TAU_LP * 10)
        psi = cert.psi + lipschitz_bump(inst, 2)
        for _ in range(2):
            a = rng.normal(size=inst.dim)
            a *= rng.uniform(0, 10) / np.linalg.norm(a)
            assert ctx.D(psi.add_affine(a, rng.normal())) == pytest.approx(ctx.D(psi), abs=1e-8)


def test_D_independent_of_kernel(gen_cases):
    for inst, ps, cert, ctx in gen_cases:
        psi = cert.psi + lipschitz_bump(inst, 4)
        vals = [ctx.D(psi, sample_mt(inst, s)) for s in range(3)]
        assert max(vals) - min(vals) <= 1e-8


def test_sandwich(gen_cases):
    for inst, ps, cert, ctx in gen_cases:
        psi = cert.psi + lipschitz_bump(inst, 6)
        pi = sample_mt(inst, 0)
        integ = pi.kernel @ psi(inst.nu.points)
        phi = ctx.phi(psi)
        assert np.all(phi <= psi(inst.mu.points) + TAU_LP)
        assert np.all(psi(inst.mu.points) <= integ + TAU_LP)


def _random_convex(rng, inst):
    k = rng.integers(1, 5)
    return ConvexPL(rng.normal(size=(k, inst.dim)) * 2, rng.normal(size=k))


def test_psi_hat_minimal(gen_cases, std, std_ctx):
    rng = np.random.default_rng(11)
    for inst, ps, cert, ctx in gen_cases[:2] + [(*std, std_ctx)]:
        base = ctx.D(cert.psi)
        for _ in range(100 if inst.mu.size == 1 else 25):
            assert base <= ctx.D(_random_convex(rng, inst)) + TAU_LP


def test_L_examples(std, std_ctx):
    inst, ps, cert = std
    ctx = std_ctx
    assert np.allclose(ctx.L(cert.psi), ps.per_x_mcov, atol=TAU_LP)
    shifted = cert.psi.add_affine([1.7], -0.4)
    assert np.allclose(ctx.L(shifted), ctx.L(cert.psi), atol=1e-8)
    assert L_of(cert.psi, ps, 0, inst.gamma, ctx.Y) == pytest.approx(ps.per_x_mcov[0], abs=TAU_LP)


def test_L_of_zero_three_point_grid():
    mu = DM.dirac([0.0])
    nu = DM([[-1.0], [0.0], [1.0]], [0.25, 0.5, 0.25])
    inst = Instance.create(mu, nu, n_gauss=8)
    ps = solve_primal(inst)
    Y = nu.points
    L0 = L_of(ConvexPL.zero(1), ps, 0, inst.gamma, Y)
    brute = max(oracles.quantile_mcov_1d(Y[:, 0], [a, 1 - 2 * a, a], inst.gamma.points[:, 0],
                                         inst.gamma.weights) for a in np.linspace(0, 0.5, 5001))
    assert L0 == pytest.approx(brute, abs=1e-6)
    assert L0 >= ps.per_x_mcov[0] - TAU_LP


def test_L_lower_bound(gen_cases):
    rng = np.random.default_rng(3)
    for inst, ps, cert, ctx in gen_cases:
        for _ in range(5):
            assert np.all(ctx.L(_random_convex(rng, inst)) >= ps.per_x_mcov - TAU_LP)


# ----------------------------------------------------------------- optimizing sequences

def test_check_optimizing_constant_and_bump(std, std_ctx):
    inst, ps, cert = std
    rep = check_optimizing([cert.psi] * 6, std_ctx)
    assert rep.optimizing and np.all(rep.e <= TAU_LP)
    bumped = cert.psi + lipschitz_bump(inst, 0).scale(0.5)
    rep = check_optimizing([bumped] * 6, std_ctx)
    assert not rep.optimizing and rep.e[0] > 1e-3


def test_tail_nonincreasing():
    assert tail_nonincreasing([5, 4, 3, 2, 1, 0.5])
    assert tail_nonincreasing([1, 1, 1.05])
    assert not tail_nonincreasing([1, 1, 1, 1, 1.5, 2.0])


def test_sequence_spec_validation():
    with pytest.raises(ValueError):
        SequenceSpec(Strategy.PERTURB, length=3, schedule=[0.5, 0.5, 0.1])
    with pytest.raises(ValueError):
        SequenceSpec(Strategy.PERTURB, length=2, schedule=[0.5, -0.1])
    with pytest.raises(ValueError):
        SequenceSpec(Strategy.PERTURB, length=0)
    s = SequenceSpec("ENTROPIC", length=5)
    assert s.strategy is Strategy.ENTROPIC and np.all(np.diff(s.schedule) < 0)


def test_perturb_harmonic_schedule_optimizing(std, std_ctx):
    inst, ps, cert = std
    n = 12
    spec = SequenceSpec(Strategy.PERTURB, length=n, schedule=1.0 / np.arange(1, n + 1) * 1e-5)
    seq = gen_sequence(spec, inst, cert.psi).psis
    rep = check_optimizing(seq, std_ctx)
    assert rep.optimizing
    # e_n <= C h_n
    assert np.all(rep.e <= 10 * spec.schedule + TAU_LP)


def test_perturb_default_optimizing(gen_cases):
    for inst, ps, cert, ctx in gen_cases:
        seq = gen_sequence(SequenceSpec(Strategy.PERTURB, length=24), inst, cert.psi).psis
        assert check_optimizing(seq, ctx).verdict == "OPTIMIZING"


def test_adversarial_triangle(tri):
    from mbblab.harness import measure_metric, sharpness_points

    inst, ps, cert = tri
    target = null_boundary_target(inst)
    assert target is not None
    out = gen_sequence(SequenceSpec(Strategy.ADVERSARIAL, length=24), inst, cert.psi)
    assert out.applicable
    edge = sharpness_points(inst, target)
    metrics = [measure_metric(p, cert.psi, inst.nu) for p in out.psis]
    assert metrics[-1] < metrics[0] and metrics[-1] < 1e-2
    # the spike height on the edge follows the schedule; the raw hinge equals it there
    assert np.allclose(out.info["edge_heights"], out.spec.schedule)
    ctx = DualContext(inst, ps, divisions=8)
    assert check_optimizing(out.psis, ctx).optimizing


def test_adversarial_not_applicable_in_1d(std):
    inst, ps, cert = std
    out = gen_sequence(SequenceSpec(Strategy.ADVERSARIAL, length=4), inst, cert.psi)
    assert not out.applicable and out.psis == []
