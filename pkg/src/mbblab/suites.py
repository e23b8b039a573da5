"""Verification suites producing report rows
``(instance_id, check_id, n_or_j, value, threshold, verdict)``."""

from __future__ import annotations

import numpy as np

from . import harness as H
from .bass import lemma2_report
from .dual import D_of, DualContext, SequenceSpec, Strategy, lipschitz_bump
from .lp import TAU_LP
from .mbb import extract_dual, irreducibility, sample_mt, solve_primal
from .transport import mcov, strassen_extend, verify_mcov_chain, w2sq

SUITES = ("identities", "theorem1", "lemma2", "lemma3", "lemma4")

DEFAULT_TOLS = {
    "gap": 1e-7, "pi_independence": 1e-8, "affine": 1e-8, "chain": TAU_LP, "w2": 1e-8,
    "strassen": 1e-12, "l0": H.TOL_L0, "l1": H.TOL_L1, "liminf": H.TOL_LIMINF, "opt": 1e-6,
    "localize": 1e-7,
}


def _v(ok: bool) -> str:
    return H.PASS if ok else H.FAIL


def identities(inst, iid, tols, seed: int = 0):
    rows = []
    ps = solve_primal(inst)
    cert = extract_dual(inst, ps, tol=np.inf)
    v = ps.value
    thr = tols["gap"] * (1 + abs(v))
    gap = abs(v - cert.value)
    rows.append((iid, "identities:duality_gap", 0, gap, thr, _v(gap <= thr)))

    rng = np.random.default_rng(seed)
    ctx = DualContext(inst, ps)
    psi = cert.psi + lipschitz_bump(inst, seed)
    kernels = [ps.sbm_kernel, sample_mt(inst, seed), sample_mt(inst, seed + 1)]
    ds = [D_of(psi, k, inst.gamma, ctx.Y, ctx.solver) for k in kernels]
    spread = max(ds) - min(ds)
    rows.append((iid, "identities:pi_independence", 0, spread, tols["pi_independence"],
                 _v(spread <= tols["pi_independence"])))

    base = ctx.D(psi)
    for n in range(3):
        a = rng.normal(size=inst.dim) * 3
        dev = abs(ctx.D(psi.add_affine(a, float(rng.normal() * 3))) - base)
        rows.append((iid, "identities:affine_invariance", n, dev, tols["affine"],
                     _v(dev <= tols["affine"])))

    chain = verify_mcov_chain(inst.mu, inst.nu, inst.gamma)
    worst = min(chain.gaps)
    rows.append((iid, "identities:mcov_chain", 0, worst, -tols["chain"], _v(worst >= -tols["chain"])))

    w2 = w2sq(inst.mu, inst.nu).discrepancy
    rows.append((iid, "identities:w2_identity", 0, w2, tols["w2"], _v(w2 <= tols["w2"])))
    return rows


def lemma3(inst, iid, tols, seed: int = 0):
    rows = []
    chain = verify_mcov_chain(inst.mu, inst.nu, inst.gamma)
    for k, g in enumerate(chain.gaps):
        rows.append((iid, "lemma3:mcov_chain_gap", k, g, -tols["chain"], _v(g >= -tols["chain"])))
    ps = solve_primal(inst)
    _, coupling = mcov(inst.mu, inst.gamma)
    for n, pi in enumerate([ps.sbm_kernel, sample_mt(inst, seed)]):
        dev = strassen_extend(pi, coupling).martingale_deviation()
        rows.append((iid, "lemma3:strassen_deviation", n, dev, tols["strassen"],
                     _v(dev <= tols["strassen"])))
    return rows


def lemma2(inst, iid, tols, seed: int = 0, J: int = 8):
    if inst.dim != 1:
        return [(iid, "lemma2:applicability", 0, float("nan"), float("nan"), H.NOT_APPLICABLE)]
    rep = lemma2_report(inst, solve_primal(inst), J=J)
    if not rep.applicable:
        return [(iid, "lemma2:applicability", 0, float("nan"), float("nan"), H.NOT_APPLICABLE)]
    return [(iid, f"lemma2:x{r.x_index}:{r.check}", r.j, r.value, r.threshold, _v(r.passed))
            for r in rep.rows]


def _irreducible_row(inst, iid, suite):
    irr, _, t = irreducibility(inst)
    return irr, (iid, f"{suite}:irreducible", 0, t, 1e-10, H.PASS if irr else H.NOT_APPLICABLE)


def theorem1(inst, iid, tols, seed: int = 0, strategies=None, length: int = 24):
    irr, row = _irreducible_row(inst, iid, "theorem1")
    if not irr:
        return [row]
    strategies = strategies or list(Strategy)
    specs = [SequenceSpec(Strategy(s), length=length, seed=seed) for s in strategies]
    rep = H.theorem1_harness(inst, specs, check_irreducible=False, tol_l0=tols["l0"],
                             tol_l1=tols["l1"], tol_liminf=tols["liminf"], tol_opt=tols["opt"])
    out = [row]
    for r in rep.rows(iid):
        out.append((r[0], "theorem1:" + r[1], *r[2:]))
    return out


def lemma4(inst, iid, tols, seed: int = 0, length: int = 24):
    irr, row = _irreducible_row(inst, iid, "lemma4")
    if not irr:
        return [row]
    rows = [row]
    ps = solve_primal(inst)
    psi_hat = extract_dual(inst, ps).psi
    windows = H.covering_windows(inst)
    kernel = sample_mt(inst, seed)
    spec = SequenceSpec(Strategy.PERTURB, length=length, seed=seed)
    from .dual import gen_sequence

    positive = gen_sequence(spec, inst, psi_hat).psis
    controls = [("positive", positive),
                ("negative", H.window_split_control(inst, kernel, psi_hat, windows, length=length))]
    for name, seq in controls:
        if seq is None:
            rows.append((iid, f"lemma4:{name}:equivalence", 0, float("nan"), float("nan"),
                         H.NOT_APPLICABLE))
            continue
        rep = H.lemma4_harness(inst, kernel, seq, psi_hat, windows, tol=tols["l0"])
        rows.append((iid, f"lemma4:{name}:equivalence", len(windows), float(rep.converges_nu),
                     float(all(rep.converges_parts)), _v(rep.consistent)))
        rows.append((iid, f"lemma4:{name}:decomposition_bound", len(windows), rep.bound_violation,
                     1e-12, _v(rep.bound_violation <= 1e-12)))
        expect = name == "positive"
        rows.append((iid, f"lemma4:{name}:verdict", len(windows), rep.rho_nu[-1], tols["l0"],
                     _v(rep.converges_nu == expect)))
    return rows


RUNNERS = {"identities": identities, "theorem1": theorem1, "lemma2": lemma2,
           "lemma3": lemma3, "lemma4": lemma4}


def run_suite(name: str, inst, iid: str, tols=None, **kw):
    t = dict(DEFAULT_TOLS)
    t.update(tols or {})
    if name not in ("theorem1", "lemma4"):
        kw.pop("strategies", None)
        kw.pop("length", None)
    if name == "lemma4":
        kw.pop("strategies", None)
    return RUNNERS[name](inst, iid, t, **kw)
