"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 non-convergence, 3 optimality check failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .kkt import kkt_check
from .model import GroupedCoefficients, InputError, PenaltySpec, read_dataset, write_dataset
from .montecarlo import METHOD_LS, METHOD_Q, METHODS, Settings, run_scenario, table1_report
from .penalized import AdmmOptions, fit_ag_lasso_ls, fit_ag_lasso_q
from .pilot import compute_weights, fit_least_squares, fit_pilot
from .simgen import ErrorLaw, ScenarioSpec, generate, standard_scenarios, true_beta
from .tuning import SelectionError, auto_grid, select_lambda, write_trace

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_KKT = 3

METHOD_FLAGS = {"q": (METHOD_Q,), "ls": (METHOD_LS,), "both": METHODS}


def _lambda_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError("lambda must be finite and >= 0")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- fit / path -----------------------------------------------------------------

def _prepare(args, method):
    design, y = read_dataset(args.data, args.groups)
    if method == METHOD_Q:
        pilot = fit_pilot(design, y, args.tau)
        pilot_coef, pilot_obj, pilot_method = pilot.coefficients, pilot.objective, pilot.method
    else:
        pilot_coef = fit_least_squares(design, y)
        r = y - design.values @ pilot_coef.values
        pilot_obj, pilot_method = float(r @ r), "least-squares"
    weights = compute_weights(pilot_coef, args.gamma)
    pilot_info = {"method": pilot_method, "objective": pilot_obj}
    return design, y, weights, pilot_info


def fit_record(design, fit, tau, gamma, weights, pilot_info=None, criterion=None) -> dict:
    return {
        "method": fit.method,
        "tau": tau,
        "gamma": gamma,
        "lambda": fit.lam,
        "weights": [float(w) for w in weights],
        "group_sizes": list(design.group_sizes),
        "coefficients": [float(v) for v in fit.coefficients.values],
        "active_set": sorted(int(j) for j in fit.active_set),
        "objective": fit.objective,
        "kkt_residual": _jsonable(fit.kkt_residual),
        "iterations": fit.iterations,
        "converged": bool(fit.converged),
        "warnings": list(fit.warnings),
        "pilot": pilot_info,
        "criterion": criterion,
    }


def read_fit(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: file not found")
    try:
        rec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    need = ("method", "tau", "lambda", "weights", "group_sizes", "coefficients")
    missing = [k for k in need if not isinstance(rec, dict) or k not in rec]
    if missing:
        raise InputError(f"{path}: missing field(s) {', '.join(missing)}")
    return rec


def _selection_method(method):
    return "quantile" if method == METHOD_Q else "least-squares"


def _run_fit(args, method, lam, opts):
    design, y, weights, pilot_info = _prepare(args, method)
    criterion = None
    selection = None
    if lam == "auto":
        grid = auto_grid(design, y, args.tau, weights, _selection_method(method),
                         args.grid_count, args.grid_min_ratio)
        selection = select_lambda(design, y, args.tau, grid, weights, _selection_method(method), opts)
        fit = selection.fit
        criterion = float(selection.criteria[selection.index])
    elif method == METHOD_Q:
        fit = fit_ag_lasso_q(design, y, args.tau, PenaltySpec(lam, weights, args.gamma), opts)
    else:
        fit = fit_ag_lasso_ls(design, y, PenaltySpec(lam, weights, args.gamma))
    rec = fit_record(design, fit, args.tau, args.gamma, weights, pilot_info, criterion)
    return rec, selection


def cmd_fit(args) -> int:
    method = METHOD_FLAGS[args.method][0]
    opts = AdmmOptions(primal_tol=args.tol, dual_tol=args.tol, max_iter=args.max_iter)
    rec, selection = _run_fit(args, method, args.lam, opts)
    out = _out_dir(args)
    _write_json(out / "fit.json", rec)
    if selection is not None:
        write_trace(out / "trace.csv", selection)
    print(f"lambda={rec['lambda']:.6g} active={rec['active_set']} objective={rec['objective']:.10g} "
          f"converged={rec['converged']}")
    return EXIT_OK if rec["converged"] else EXIT_NOT_CONVERGED


def cmd_path(args) -> int:
    method = METHOD_FLAGS[args.method][0]
    opts = AdmmOptions(primal_tol=args.tol, dual_tol=args.tol, max_iter=args.max_iter)
    rec, selection = _run_fit(args, method, "auto", opts)
    out = _out_dir(args)
    write_trace(out / "trace.csv", selection)
    _write_json(out / "fit.json", rec)
    for i, (lam, f) in enumerate(zip(selection.grid.values, selection.fits)):
        mark = "*" if i == selection.index else " "
        print(f"{mark} {lam:12.6g} {selection.criteria[i]:14.6f} df={selection.df[i]:3d} "
              f"active={sorted(f.active_set)}")
    return EXIT_OK if rec["converged"] else EXIT_NOT_CONVERGED


# --- kkt --------------------------------------------------------------------------

def cmd_kkt(args) -> int:
    design, y = read_dataset(args.data, args.groups)
    rec = read_fit(args.fit)
    if tuple(rec["group_sizes"]) != design.group_sizes:
        raise InputError(f"{args.fit}: group partition {rec['group_sizes']} does not match "
                         f"{args.groups} {list(design.group_sizes)}")
    if rec["method"] != METHOD_Q:
        raise InputError(f"{args.fit}: optimality check applies to {METHOD_Q} fits, not {rec['method']}")
    coef = GroupedCoefficients(np.array(rec["coefficients"], dtype=float), design.group_sizes)
    penalty = PenaltySpec(float(rec["lambda"]), np.array(rec["weights"], dtype=float),
                          float(rec.get("gamma", 1.0)))
    report = kkt_check(design, y, coef, float(rec["tau"]), penalty, tol=args.tol)
    print(f"{'group':>5} {'active':>6} {'residual':>12}")
    for g in report.groups:
        print(f"{g.group:>5} {('yes' if g.active else 'no'):>6} {g.residual:12.3e}")
    print(f"overall={report.overall:.3e} interpolated={report.n_interpolated} tol={report.tol:g} "
          f"{'PASS' if report.passed else 'FAIL'}")
    if args.out_dir:
        _write_json(_out_dir(args) / "kkt.json", report.to_dict())
    return EXIT_OK if report.passed else EXIT_KKT


# --- scenarios ----------------------------------------------------------------------

def _scenario_from_args(args) -> ScenarioSpec:
    if args.config:
        cfg = _load_config(args.config)
        items = cfg["scenarios"]
        if len(items) != 1:
            raise InputError(f"{args.config}: simulate takes exactly one scenario")
        sc = items[0]
    else:
        sc = ScenarioSpec(args.n, args.p, ErrorLaw(args.family, args.scale), tau=args.tau_sim)
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    if args.noiseless:
        sc = replace(sc, noiseless=True)
    return sc


def _load_config(path) -> dict:
    """Scenario config: one scenario object, a list, or {"scenarios": [...], "reps": k, "seed": s}."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: file not found")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if isinstance(raw, list):
        raw = {"scenarios": raw}
    elif isinstance(raw, dict) and "scenarios" not in raw:
        raw = {"scenarios": [raw], "reps": raw.get("reps")}
    if not isinstance(raw, dict) or not isinstance(raw.get("scenarios"), list) or not raw["scenarios"]:
        raise InputError(f"{path}: expected a scenario object, a list of them, or {{\"scenarios\": [...]}}")
    out = []
    for k, item in enumerate(raw["scenarios"]):
        try:
            if "seed" not in item and raw.get("seed") is not None:
                item = dict(item, seed=raw["seed"])
            out.append(ScenarioSpec.from_dict(item))
        except KeyError as exc:
            raise InputError(f"{path}: scenario {k}: missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise InputError(f"{path}: scenario {k}: {exc}") from None
    reps = raw.get("reps")
    if reps is not None and (not isinstance(reps, int) or reps < 1):
        raise InputError(f"{path}: reps must be a positive integer")
    return {"scenarios": out, "reps": reps}


def cmd_simulate(args) -> int:
    sc = _scenario_from_args(args)
    design, y = generate(sc, args.rep)
    out = _out_dir(args)
    write_dataset(out / "data.csv", out / "groups.json", design, y)
    _write_json(out / "scenario.json", dict(sc.to_dict(), rep=args.rep))
    _write_json(out / "truth.json", {"coefficients": [float(v) for v in true_beta(sc.p).values]})
    print(f"wrote {sc.label} replication {args.rep} to {out}")
    return EXIT_OK


def cmd_replicate(args) -> int:
    if args.config:
        cfg = _load_config(args.config)
        scenarios, reps = cfg["scenarios"], cfg["reps"]
    else:
        scenarios, reps = standard_scenarios(), None
    reps = args.reps or reps or 200
    if args.seed is not None:
        scenarios = [replace(s, seed=args.seed) for s in scenarios]
    if args.noiseless:
        scenarios = [replace(s, noiseless=True) for s in scenarios]
    methods = METHOD_FLAGS[args.method]
    settings = Settings(args.gamma, args.grid_count, args.grid_min_ratio)

    out = _out_dir(args)
    reports = []
    outcome_rows = []
    for k, sc in enumerate(scenarios, start=1):
        t0 = time.perf_counter()
        rep = run_scenario(sc, methods, reps, workers=args.threads, settings=settings)
        reports.append(rep)
        for o in rep.outcomes:
            outcome_rows.append(dict({"n": sc.n, "p": sc.p, "errors": sc.error.family}, **o.to_row()))
        print(f"[{k}/{len(scenarios)}] {sc.label} reps={reps} done in {time.perf_counter() - t0:.1f}s",
              file=sys.stderr, flush=True)
    text, table = table1_report(reports)
    (out / "summary.json").write_text(text)
    (out / "table1.md").write_text(table)
    if args.outcomes:
        with (out / "outcomes.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(outcome_rows[0].keys()))
            w.writeheader()
            w.writerows(outcome_rows)
    print(table, end="")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; argparse would otherwise exit with 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gqlasso", description="Adaptive group LASSO quantile regression.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp):
        sp.add_argument("data", help="CSV with a 'y' column followed by the design columns")
        sp.add_argument("groups", help='JSON {"group_sizes": [d1, ..., dp]}')

    def model_args(sp):
        sp.add_argument("--tau", type=float, default=0.5)
        sp.add_argument("--gamma", type=float, default=1.0)
        sp.add_argument("--method", choices=("q", "ls"), default="q")
        sp.add_argument("--grid-count", type=int, default=50)
        sp.add_argument("--grid-min-ratio", type=float, default=1e-3)
        sp.add_argument("--tol", type=float, default=1e-4, help="ADMM residual tolerance")
        sp.add_argument("--max-iter", type=_positive_int, default=20000, help="ADMM iteration budget")
        sp.add_argument("--out-dir", default=".")

    sp = sub.add_parser("fit", help="fit at one lambda (or tune it with --lambda auto)")
    data_args(sp)
    model_args(sp)
    sp.add_argument("--lambda", dest="lam", type=_lambda_arg, default="auto")
    sp.add_argument("--auto", dest="lam", action="store_const", const="auto", help="same as --lambda auto")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("path", help="fit the lambda grid and report the selection trace")
    data_args(sp)
    model_args(sp)
    sp.set_defaults(func=cmd_path)

    sp = sub.add_parser("kkt", help="check the optimality conditions of a fit.json")
    data_args(sp)
    sp.add_argument("fit", help="fit.json written by 'fit' or 'path'")
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--out-dir", default=None)
    sp.set_defaults(func=cmd_kkt)

    def scenario_args(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--noiseless", action="store_true", help="force all errors to zero")
        sp.add_argument("--out-dir", default=".")

    sp = sub.add_parser("simulate", help="write one generated replication as CSV + JSON")
    sp.add_argument("--config", default=None, help="scenario JSON")
    sp.add_argument("--n", type=_positive_int, default=100)
    sp.add_argument("--p", type=_positive_int, default=10)
    sp.add_argument("--family", choices=("normal", "cauchy"), default="normal")
    sp.add_argument("--scale", type=float, default=3.0)
    sp.add_argument("--tau", dest="tau_sim", type=float, default=0.5)
    sp.add_argument("--rep", type=int, default=0)
    scenario_args(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("replicate-table1", help="run the selection experiment and write the summary table")
    sp.add_argument("config", nargs="?", default=None, help="scenario JSON (default: the 16 standard cells)")
    sp.add_argument("--reps", type=_positive_int, default=None)
    sp.add_argument("--method", choices=tuple(METHOD_FLAGS), default="both")
    sp.add_argument("--threads", type=_positive_int, default=None)
    sp.add_argument("--gamma", type=float, default=1.0)
    sp.add_argument("--grid-count", type=int, default=50)
    sp.add_argument("--grid-min-ratio", type=float, default=1e-3)
    sp.add_argument("--outcomes", action="store_true", help="also write per-replication outcomes.csv")
    scenario_args(sp)
    sp.set_defaults(func=cmd_replicate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SelectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
