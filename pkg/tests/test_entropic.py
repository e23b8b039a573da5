import numpy as np
import pytest

from mbblab.dual import DualContext, SequenceSpec, Strategy, check_optimizing, gen_sequence
from mbblab.entropic import EntropicMBB
from mbblab.harness import gen_instance, standard_instance, triangle_instance
from mbblab.mbb import extract_dual, solve_primal

EPS = 2.0 ** -np.arange(1, 13)


@pytest.fixture(scope="module", params=["standard", "gen1d", "triangle", "gen2d"])
def case(request):
    inst = {"standard": lambda: standard_instance(),
            "gen1d": lambda: gen_instance(1, 2, 6, 0, n_gauss=16),
            "triangle": lambda: triangle_instance(16),
            "gen2d": lambda: gen_instance(2, 1, 5, 4, n_gauss=16)}[request.param]()
    return inst, solve_primal(inst)


def test_values_increase_to_primal(case):
    inst, ps = case
    path = EntropicMBB(inst).path(EPS)
    v = np.array([r.value for r in path])
    res = np.array([r.residual for r in path])
    assert abs(v[-1] - ps.value) <= 1e-4
    assert np.all(res <= EPS / 100)
    # an inexact plan moves the value by at most residual * max |<y, z>|
    slack = (res[1:] + res[:-1]) * np.abs(inst.nu.points @ inst.gamma.points.T).max()
    assert np.all(np.diff(v) >= -slack - 1e-10)


def test_plan_is_near_feasible(case):
    inst, ps = case
    r = EntropicMBB(inst).solve(0.05)
    q = r.plan
    xz = q.sum(axis=1)
    assert np.max(np.abs(xz - np.outer(inst.mu.weights, inst.gamma.weights))) <= 0.05 / 100 + 1e-12
    assert np.max(np.abs(q.sum(axis=(0, 2)) - inst.nu.weights)) <= 0.05 / 100 + 1e-12
    assert np.all(q >= 0)


def test_entropic_sequence_optimizing(case):
    inst, ps = case
    cert = extract_dual(inst, ps)
    out = gen_sequence(SequenceSpec(Strategy.ENTROPIC, length=16), inst, cert.psi)
    assert len(out.psis) == 16
    ctx = DualContext(inst, ps, divisions=8)
    rep = check_optimizing(out.psis, ctx)
    assert rep.e[-1] < rep.e[0] or rep.e[0] <= 1e-6
    assert rep.verdict == "OPTIMIZING"


def test_warm_start_matches_cold(case):
    inst, _ = case
    solver = EntropicMBB(inst)
    warm = solver.path([0.1])[0]
    cold = solver.solve(0.1, tol=1e-10)
    assert warm.value == pytest.approx(cold.value, abs=1e-3)


def test_gauge_directions_leave_plan_unchanged():
    inst = gen_instance(2, 2, 6, 3, n_gauss=16)
    solver = EntropicMBB(inst)
    assert solver.gauge.shape[1] == inst.dim + 1
    assert np.abs(solver.A.T @ solver.gauge).max() <= 1e-12


def test_path_stays_finite_at_tiny_eps():
    inst = gen_instance(1, 2, 6, 702)
    res = EntropicMBB(inst).path([1e-3, 1e-6, 1e-9, 1e-12])
    u = np.concatenate([res[-1].state.m.ravel(), res[-1].state.psi])
    assert np.all(np.isfinite(u)) and np.abs(u).max() < 1e3
