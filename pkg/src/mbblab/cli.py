"""``mbb`` command line: solve, verify, gen.

Exit codes: 0 success, 1 FAIL rows present, 2 parse error, 3 not in convex
order, 4 numeric failure, 5 instance generation exhausted its redraws.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import files
from .harness import RedrawBudgetError, gen_instance
from .lp import LPError
from .measures import MeasureError
from .transport import ConvexOrderError, check_convex_order

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_ORDER, EXIT_NUMERIC, EXIT_REDRAW = 0, 1, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MBB_THREADS", "1")))
    except ValueError:
        return 1


def _parse_gen(text: str):
    try:
        d, n_mu, n_nu = (int(t) for t in text.split(","))
    except ValueError:
        raise CliError(EXIT_PARSE, f"--gen: expected 'd,n_mu,n_nu', got {text!r}") from None
    return d, n_mu, n_nu


def _parse_tols(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep or key not in files.TOLERANCE_KEYS:
            raise CliError(EXIT_PARSE, f"--tol: expected KEY=VALUE with KEY in "
                                       f"{', '.join(files.TOLERANCE_KEYS)}, got {item!r}")
        try:
            out[key] = float(val)
        except ValueError:
            raise CliError(EXIT_PARSE, f"--tol {key}: not a number: {val!r}") from None
    return out


def _load(path, gauss_points=None, check=True):
    """Parse an instance file; map failures to the exit-code contract."""
    try:
        f = files.read_instance(path)
    except files.FileFormatError as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc}") from exc
    try:
        inst = f.instance(check=check, gaussian_points=gauss_points)
    except ConvexOrderError:
        res = check_convex_order(f.mu, f.nu)
        raise CliError(EXIT_ORDER, f"{path}: {res.summary()}") from None
    except MeasureError as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc}") from exc
    return f, inst


# ---------------------------------------------------------------------------
# solve


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(repr(float(v)) for v in r))
    return "\n".join(lines) + "\n"


def cmd_solve(args) -> int:
    from .dual import SequenceSpec, Strategy, gen_sequence
    from .mbb import extract_dual, solve_primal

    f, inst = _load(args.path, args.gauss_points)
    try:
        ps = solve_primal(inst)
        cert = extract_dual(inst, ps)
    except (LPError, np.linalg.LinAlgError) as exc:
        raise CliError(EXIT_NUMERIC, f"numeric failure: {exc}") from exc
    out = Path(args.out)
    d = inst.dim
    grid = np.vstack([inst.nu.points, inst.geometry.lattice(args.grid)])
    grid = np.unique(grid, axis=0)
    coords = [f"y{k}" for k in range(d)]
    files.atomic_write(out / "psi_hat.csv", _csv(coords + ["psi_hat"],
                                                 np.column_stack([grid, cert.psi(grid)])))
    xc = [f"x{k}" for k in range(d)]
    files.atomic_write(out / "phi_hat.csv", _csv(xc + ["phi_hat"],
                                                 np.column_stack([inst.mu.points, cert.phi_hat])))
    files.atomic_write(out / "per_x_mcov.csv", _csv(xc + ["per_x_mcov"],
                                                    np.column_stack([inst.mu.points, ps.per_x_mcov])))
    summary = {"primal_value": ps.value, "dual_value": cert.value,
               "duality_gap": abs(ps.value - cert.value), "dimension": d,
               "mu_atoms": inst.mu.size, "nu_atoms": inst.nu.size,
               "gaussian_points": inst.gamma.size}
    files.atomic_write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.emit_plot:
        if d != 1:
            print("--emit-plot: skipped (only d = 1 is plotted)", file=sys.stderr)
        else:
            spec = SequenceSpec(Strategy(args.seq_strategy), length=args.seq_len, seed=args.seed)
            seq = gen_sequence(spec, inst, cert.psi).psis
            _plot(out / "psi.svg", inst, cert.psi, seq[-3:])
    print(f"value {ps.value!r} dual {cert.value!r} gap {summary['duality_gap']:.3g}")
    return EXIT_OK


def _plot(path, inst, psi_hat, tail):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    lo, hi = inst.geometry.hull_vertices[:, 0].min(), inst.geometry.hull_vertices[:, 0].max()
    pad = 0.1 * (hi - lo)
    y = np.linspace(lo - pad, hi + pad, 401)[:, None]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(y[:, 0], psi_hat(y), color="black", lw=2, label="psi_hat")
    for k, f in enumerate(tail):
        ax.plot(y[:, 0], f(y), lw=1, ls="--", label=f"psi_n (n = last - {len(tail) - 1 - k})")
    ax.plot(inst.nu.points[:, 0], psi_hat(inst.nu.points), "o", color="black", label="nu atoms")
    ax.legend()
    ax.set_xlabel("y")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    plt.rcParams["svg.hashsalt"] = "mbb"
    fig.savefig(tmp, format="svg", metadata={"Date": None})
    plt.close(fig)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# verify


def _verify_job(job):
    from .suites import run_suite

    suite, inst, iid, tols, kw = job
    return run_suite(suite, inst, iid, tols, **kw)


def _instances(args):
    """``[(instance_id, Instance, file tolerances)]`` from a path or ``--gen``."""
    if args.gen:
        d, n_mu, n_nu = _parse_gen(args.gen)
        out = []
        for s in range(args.seed, args.seed + args.count):
            try:
                inst = gen_instance(d, n_mu, n_nu, s, n_gauss=args.gauss_points or 64)
            except RedrawBudgetError as exc:
                raise CliError(EXIT_REDRAW, str(exc)) from exc
            out.append((f"gen-d{d}-m{n_mu}-n{n_nu}-s{s:04d}", inst, {}))
        return out
    if not args.path:
        raise CliError(EXIT_PARSE, "verify needs an instance file or --gen")
    f, inst = _load(args.path, args.gauss_points)
    return [(Path(args.path).stem, inst, f.tolerances)]


def cmd_verify(args) -> int:
    tol_cli = _parse_tols(args.tol)
    strategies = None if args.seq_strategy == "ALL" else [args.seq_strategy]
    jobs = []
    for iid, inst, tol_file in _instances(args):
        tols = {**tol_file, **tol_cli}
        kw = {"seed": args.seed, "strategies": strategies, "length": args.seq_len}
        jobs.append((args.suite, inst, iid, tols, kw))
    try:
        if _threads() > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=_threads()) as pool:
                results = list(pool.map(_verify_job, jobs))
        else:
            results = [_verify_job(j) for j in jobs]
    except ConvexOrderError as exc:
        raise CliError(EXIT_ORDER, str(exc)) from exc
    except (LPError, np.linalg.LinAlgError) as exc:
        raise CliError(EXIT_NUMERIC, f"numeric failure: {exc}") from exc
    rows = [r for res in results for r in res]
    out = Path(args.out)
    files.write_report(out / f"report_{args.suite}.csv", rows)
    n_fail = sum(r[5] == "FAIL" for r in rows)
    counts = {v: sum(r[5] == v for r in rows) for v in files.VERDICTS}
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    for r in rows:
        if r[5] == "FAIL":
            print(f"FAIL {r[0]} {r[1]} [{r[2]}] value={r[3]!r} threshold={r[4]!r}")
    return EXIT_FAIL if n_fail else EXIT_OK


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    out = Path(args.out)
    for s in range(args.seed, args.seed + args.count):
        try:
            inst = gen_instance(args.dim, args.n_mu, args.n_nu, s, n_gauss=args.gauss_points)
        except RedrawBudgetError as exc:
            raise CliError(EXIT_REDRAW, str(exc)) from exc
        except ValueError as exc:
            raise CliError(EXIT_PARSE, str(exc)) from exc
        name = out / f"gen-d{args.dim}-m{args.n_mu}-n{args.n_nu}-s{s:04d}.json"
        files.write_instance(name, files.InstanceFile.from_instance(inst, seed=s))
        print(name)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .suites import SUITES

    p = argparse.ArgumentParser(prog="mbb", description="Grid-world martingale Benamou-Brenier toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve an instance and write the optimizers")
    s.add_argument("path")
    s.add_argument("--out", default="mbb_out")
    s.add_argument("--gauss-points", type=int, default=None)
    s.add_argument("--grid", type=int, default=16, help="lattice divisions for psi_hat values")
    s.add_argument("--emit-plot", action="store_true")
    s.add_argument("--seq-strategy", default="PERTURB", choices=["PERTURB", "ENTROPIC", "ADVERSARIAL"])
    s.add_argument("--seq-len", type=int, default=24)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="run a verification suite and write a report")
    v.add_argument("path", nargs="?")
    v.add_argument("--suite", required=True, choices=SUITES)
    v.add_argument("--gen", help="generate instances instead: 'd,n_mu,n_nu'")
    v.add_argument("--count", type=int, default=1, help="number of generated instances")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--gauss-points", type=int, default=None)
    v.add_argument("--seq-strategy", default="ALL",
                   choices=["ALL", "PERTURB", "ENTROPIC", "ADVERSARIAL"])
    v.add_argument("--seq-len", type=int, default=24)
    v.add_argument("--tol", action="append", metavar="KEY=VALUE")
    v.add_argument("--out", default="mbb_out")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gen", help="write generated instance files")
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--n-mu", type=int, required=True)
    g.add_argument("--n-nu", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--gauss-points", type=int, default=64)
    g.add_argument("--out", default=".")
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
