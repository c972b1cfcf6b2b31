"""Command-line front end: ``exclasso {gen,solve,bench,path}``.

Exit codes: 0 when every requested solve converged, 1 when a solve finished
without reaching the tolerance, 2 on usage or input errors. Set
``EXCLASSO_NUM_THREADS`` to cap the BLAS thread pools.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from .baselines import BaselineParams, admm_solve, apg_solve, ilsa_solve
from .data import (
    DataFormatError,
    SyntheticSpec,
    gen_synthetic,
    lambda_from_fraction,
    load_instance,
    load_manifest,
    log_grid,
    save_instance,
    write_vector,
)
from .model import LossKind, ProblemInstance, SolveReport
from .ppdna import PpaParams, largest_eig_AAt, solve, solve_path
from .ssn import SsnParams

logger = logging.getLogger("exclasso")

RESULT_SCHEMA_VERSION = 1
THREADS_ENV = "EXCLASSO_NUM_THREADS"
MAX_ENTRIES = 2 * 10**9
EXIT_OK, EXIT_NOT_CONVERGED, EXIT_USAGE = 0, 1, 2

BENCH_COLUMNS = ["instance", "m", "n", "lambda_b", "lambda", "solver", "iters", "eta_kkt",
                 "seconds", "converged", "rel_diff_ppdna", "status"]
PATH_COLUMNS = ["mode", "index", "lambda_b", "lambda", "iters", "eta_kkt", "seconds",
                "converged", "nnz", "nnz_per_group"]


class UsageError(Exception):
    """Bad flags or inputs; reported on stderr with exit code 2."""


def result_schema() -> dict:
    text = resources.files("exclasso").joinpath("schemas/result.schema.json").read_text("utf-8")
    return json.loads(text)


def validate_result(doc: dict) -> None:
    import jsonschema

    jsonschema.validate(doc, result_schema())


def _finite(v):
    return None if v is None or not math.isfinite(v) else float(v)


# ---------------------------------------------------------------------------
# solver dispatch


def run_solver(inst: ProblemInstance, solver: str, tol: float, max_iter: int | None = None,
               max_time: float | None = None, strategy: str | None = None) -> SolveReport:
    if solver == "ppdna":
        ssn = SsnParams(max_iter=50, strategy=None if strategy in (None, "auto") else strategy)
        params = PpaParams(tol=tol, max_time=max_time, ssn=ssn)
        if max_iter is not None:
            params.max_outer = max_iter
        return solve(inst, params)
    params = BaselineParams(tol=tol, max_time=max_time)
    if max_iter is not None:
        params.max_iter = max_iter
    fn = {"admm": admm_solve, "apg": apg_solve, "ilsa": ilsa_solve}[solver]
    return fn(inst, params)


def _resolve_lambda(inst: ProblemInstance, lam, lam_b) -> tuple[float, float | None]:
    if lam is not None and lam_b is not None:
        raise UsageError("give at most one of --lambda and --lambda-b")
    if lam_b is not None:
        return lambda_from_fraction(inst.A, inst.b, lam_b), lam_b
    if lam is not None:
        return lam, None
    return inst.lam, None


# ---------------------------------------------------------------------------
# gen


def _spec_from_args(args, seed=None) -> SyntheticSpec:
    for name in ("m", "l", "p"):
        if getattr(args, name) <= 0:
            raise UsageError(f"--{name} must be positive")
    n = args.l * args.p
    if args.m * n > MAX_ENTRIES:
        raise UsageError(f"m*l*p = {args.m * n} entries exceeds the supported {MAX_ENTRIES}")
    return SyntheticSpec(args.m, args.l, args.p, seed=args.seed if seed is None else seed,
                         loss=LossKind.parse(args.loss))


def cmd_gen(args) -> int:
    spec = _spec_from_args(args)
    inst, x_star = gen_synthetic(spec)
    atb = float(np.max(np.abs(inst.A.T @ inst.b)))
    lam = args.lambda_ if args.lambda_ is not None else args.lambda_b * atb
    inst = inst.with_lambda(lam)
    out = Path(args.out)
    extra = {"seed": spec.seed, "l": spec.l, "p": spec.p, "lambda_b": args.lambda_b
             if args.lambda_ is None else None, "x_star": f"{out.stem}.xstar.csv"}
    save_instance(inst, out, fmt=args.format, extra=extra)
    write_vector(out.parent / extra["x_star"], x_star)
    print(f"m={spec.m} n={spec.n} l={spec.l} ||A^T b||_inf={atb:.6g} lambda={lam:.6g} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve


def result_document(rep: SolveReport, inst: ProblemInstance, solution_file: str, tol: float,
                    instance: str | None = None, lambda_b: float | None = None) -> dict:
    doc = {
        "schema_version": RESULT_SCHEMA_VERSION,
        "instance": instance,
        "solver": rep.solver,
        "lambda": inst.lam,
        "lambda_b": lambda_b,
        "loss": inst.loss.value,
        "m": inst.shape[0],
        "n": inst.shape[1],
        "tol": tol,
        "converged": bool(rep.converged),
        "eta_kkt": _finite(rep.eta_kkt),
        "objective": _finite(rep.objective),
        "outer_iters": int(rep.outer_iters),
        "inner_iters": int(rep.inner_iters),
        "cg_iters": int(rep.cg_iters),
        "iterations": rep.iterations_label,
        "nnz_per_group": [int(v) for v in rep.nnz_per_group],
        "timings": {k: float(v) for k, v in rep.timings.items() if k != "lambda"},
        "solution_file": solution_file,
        "message": rep.message,
    }
    validate_result(doc)
    return doc


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    lam, lam_b = _resolve_lambda(inst, args.lambda_, args.lambda_b)
    inst = inst.with_lambda(lam)
    if args.solver == "ilsa" and inst.loss is not LossKind.LEAST_SQUARES:
        raise UsageError("ilsa supports the least-squares loss only")
    rep = run_solver(inst, args.solver, args.tol, args.max_iter, args.max_time, args.strategy)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    x_path = Path(args.x_out) if args.x_out else out.with_suffix(".x.csv")
    write_vector(x_path, rep.x)
    doc = result_document(rep, inst, os.path.relpath(x_path, out.parent), args.tol,
                          instance=str(args.instance), lambda_b=lam_b)
    out.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"{rep.solver}: converged={rep.converged} eta_kkt={rep.eta_kkt:.3e} "
          f"iters={rep.iterations_label} time={rep.timings.get('total', 0.0):.3f}s -> {out}")
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------------------
# bench


def _bench_cell(task: dict) -> dict:
    inst: ProblemInstance = task["inst"]
    row = {"instance": task["name"], "m": inst.shape[0], "n": inst.shape[1],
           "lambda_b": task["lambda_b"], "lambda": inst.lam, "solver": task["solver"]}
    t0 = time.perf_counter()
    try:
        rep = run_solver(inst, task["solver"], task["tol"], max_time=task["time_cap"])
    except Exception as exc:  # recorded in the row; the sweep goes on
        row.update(iters="", eta_kkt="", seconds=time.perf_counter() - t0, converged=False,
                   rel_diff_ppdna="", status=f"error: {type(exc).__name__}: {exc}")
        return {"row": row, "x": None}
    row.update(iters=rep.iterations_label, eta_kkt=rep.eta_kkt,
               seconds=rep.timings.get("total", time.perf_counter() - t0),
               converged=rep.converged, rel_diff_ppdna="", status=rep.message or "ok")
    return {"row": row, "x": rep.x}


def cmd_bench(args) -> int:
    if (args.lambda_b is None) == (args.lambda_ is None):
        raise UsageError("give exactly one of --lambda-b and --lambda")
    loss = LossKind.parse(args.loss)
    if "ilsa" in args.solvers and loss is not LossKind.LEAST_SQUARES:
        raise UsageError("ilsa supports the least-squares loss only")
    tasks = []
    for p in args.p:
        ns = argparse.Namespace(m=args.m, l=args.l, p=p, seed=args.seed, loss=args.loss)
        base, _ = gen_synthetic(_spec_from_args(ns))
        name = f"m{args.m}_l{args.l}_p{p}_s{args.seed}"
        values = args.lambda_b if args.lambda_b is not None else args.lambda_
        for v in values:
            if args.lambda_b is not None:
                inst, lb = base.with_lambda(lambda_from_fraction(base.A, base.b, v)), v
            else:
                inst, lb = base.with_lambda(v), None
            for solver in args.solvers:
                tasks.append({"inst": inst, "name": name, "lambda_b": lb, "solver": solver,
                              "tol": args.tol, "time_cap": args.time_cap})

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_bench_cell, tasks))
    else:
        results = [_bench_cell(t) for t in tasks]

    # agreement with PPDNA on cells where both converged
    ref = {}
    for t, r in zip(tasks, results):
        if t["solver"] == "ppdna" and r["x"] is not None and r["row"]["converged"]:
            ref[(t["name"], t["inst"].lam)] = r["x"]
    all_ok = True
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    # rows are written by this process only, in task order
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        for t, r in zip(tasks, results):
            row = r["row"]
            x_ref = ref.get((t["name"], t["inst"].lam))
            if x_ref is not None and r["x"] is not None and row["converged"]:
                row["rel_diff_ppdna"] = float(np.linalg.norm(r["x"] - x_ref)
                                              / max(1.0, np.linalg.norm(x_ref)))
            all_ok &= bool(row["converged"])
            writer.writerow({k: _csv_value(row[k]) for k in BENCH_COLUMNS})
            print(f"{row['instance']} lambda={row['lambda']:.4g} {row['solver']:>5}: "
                  f"{row['iters']} eta={row['eta_kkt'] if row['eta_kkt'] == '' else format(row['eta_kkt'], '.2e')} "
                  f"{row['seconds']:.2f}s {row['status']}")
    return EXIT_OK if all_ok else EXIT_NOT_CONVERGED


def _csv_value(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


# ---------------------------------------------------------------------------
# path


def cmd_path(args) -> int:
    inst = load_instance(args.instance)
    high, low, num = args.grid
    num = int(num)
    if num < 1 or not (high > 0 and low > 0):
        raise UsageError("--grid needs HIGH > 0, LOW > 0 and NUM >= 1")
    fractions = log_grid(high, low, num)
    if args.scale == "lambda_b":
        scale = float(np.max(np.abs(inst.A.T @ inst.b)))
        if scale == 0:
            raise UsageError("A^T b = 0: lambda_b grid is undefined")
        lambdas = fractions * scale
    else:
        lambdas = fractions
    lmax = largest_eig_AAt(inst.A)
    params = PpaParams(tol=args.tol, tau=1.0 / lmax if lmax > 0 else 1.0)
    modes = ["warm", "cold"] if args.compare_warmstart else (["cold"] if args.cold else ["warm"])
    rows, totals, all_ok = [], {}, True
    for mode in modes:
        t0 = time.perf_counter()
        reps = solve_path(inst, lambdas, params, warm_start=(mode == "warm"))
        totals[mode] = time.perf_counter() - t0
        for i, (fr, lam, rep) in enumerate(zip(fractions, lambdas, reps)):
            all_ok &= bool(rep.converged)
            rows.append({"mode": mode, "index": i,
                         "lambda_b": float(fr) if args.scale == "lambda_b" else "",
                         "lambda": float(lam), "iters": rep.iterations_label,
                         "eta_kkt": rep.eta_kkt, "seconds": rep.timings.get("total", float("nan")),
                         "converged": rep.converged, "nnz": int(sum(rep.nnz_per_group)),
                         "nnz_per_group": ";".join(str(v) for v in rep.nnz_per_group)})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=PATH_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row[k]) for k in PATH_COLUMNS})
    summary = {"points": num, "totals": totals}
    if "warm" in totals and "cold" in totals and totals["warm"] > 0:
        summary["speedup"] = totals["cold"] / totals["warm"]
    if args.summary:
        Path(args.summary).write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(" ".join(f"{k}={v:.3f}s" for k, v in totals.items())
          + (f" speedup={summary['speedup']:.2f}" if "speedup" in summary else "") + f" -> {out}")
    return EXIT_OK if all_ok else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------------------
# argument parsing


def _add_lambda(p, required=False):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--lambda", dest="lambda_", type=float, help="penalty weight")
    g.add_argument("--lambda-b", dest="lambda_b", type=float,
                   help="penalty as a fraction of ||A^T b||_inf")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="exclasso", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic instance")
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--l", type=int, required=True, help="number of groups")
    g.add_argument("--p", type=int, required=True, help="features per group")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--loss", choices=["ls", "logistic"], default="ls")
    g.add_argument("--format", choices=["csv", "libsvm"], default="csv")
    g.add_argument("--out", required=True, help="manifest path (JSON)")
    lg = g.add_mutually_exclusive_group()
    lg.add_argument("--lambda", dest="lambda_", type=float)
    lg.add_argument("--lambda-b", dest="lambda_b", type=float, default=1e-3)

    s = sub.add_parser("solve", help="solve one instance")
    s.add_argument("--instance", required=True, help="instance manifest")
    _add_lambda(s)
    s.add_argument("--solver", choices=["ppdna", "admm", "apg", "ilsa"], default="ppdna")
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--max-time", type=float)
    s.add_argument("--strategy", choices=["auto", "cholesky", "woodbury", "cg"], default="auto")
    s.add_argument("--out", required=True, help="result JSON path")
    s.add_argument("--x-out", help="solution vector path (default: next to --out)")

    b = sub.add_parser("bench", help="benchmark solvers on synthetic instances")
    b.add_argument("--m", type=int, default=200)
    b.add_argument("--l", type=int, default=20)
    b.add_argument("--p", type=int, nargs="+", default=[50, 100])
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--loss", choices=["ls", "logistic"], default="ls")
    bl = b.add_mutually_exclusive_group()
    bl.add_argument("--lambda-b", dest="lambda_b", type=float, nargs="+")
    bl.add_argument("--lambda", dest="lambda_", type=float, nargs="+")
    b.add_argument("--solvers", nargs="+", choices=["ppdna", "admm", "apg", "ilsa"],
                   default=["ppdna", "admm", "apg"])
    b.add_argument("--tol", type=float, default=1e-6)
    b.add_argument("--time-cap", type=float, default=3600.0, help="seconds per cell")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", required=True, help="CSV path")

    pa = sub.add_parser("path", help="solve along a log-spaced lambda grid")
    pa.add_argument("--instance", required=True)
    pa.add_argument("--grid", nargs=3, type=float, metavar=("HIGH", "LOW", "NUM"),
                    default=[1.0, 1e-3, 10])
    pa.add_argument("--scale", choices=["lambda_b", "lambda"], default="lambda_b",
                    help="whether the grid values are fractions of ||A^T b||_inf")
    pa.add_argument("--tol", type=float, default=1e-6)
    mode = pa.add_mutually_exclusive_group()
    mode.add_argument("--compare-warmstart", action="store_true")
    mode.add_argument("--cold", action="store_true", help="solve each point from zero")
    pa.add_argument("--out", required=True, help="CSV path")
    pa.add_argument("--summary", help="optional JSON summary path")
    return ap


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "bench": cmd_bench, "path": cmd_path}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get(THREADS_ENV)
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            try:
                limit = int(threads)
            except ValueError:
                raise UsageError(f"{THREADS_ENV} must be an integer, got {threads!r}") from None
            with threadpool_limits(limits=limit):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except (UsageError, DataFormatError, FileNotFoundError, ValueError) as exc:
        print(f"exclasso {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
