"""Command-line entry point: ``dro-planning {solve,gen,suite,report}``.

Exit codes: 0 success, 2 invalid input, 3 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .experiments import (ALGORITHMS, SuiteConfig, aggregate_report, build_theta, report_rows, run_suite,
                          write_instances)
from .io import AmbiguitySpec, SchemaError, load_instance, write_csv
from .nonparametric import NonparametricAmbiguity, solve_NP
from .parametric import (DEFAULT_EPSILON, DEFAULT_KMAX, solve_AO, solve_benders, solve_CS, solve_CS_opt,
                         solve_exact_P, solve_oracle, solve_RO)

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3

SOLVE_COLUMNS = ("algorithm", "y", "p", "objective", "iterations", "pmf_tables", "evaluator_calls", "wall_time_ms",
                 "converged", "stop_reason")


class InvalidInput(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dro-planning", description=__doc__.splitlines()[0])
    ap.add_argument("--format", choices=("csv", "json"), default="json", help="output format")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one instance file")
    s.add_argument("--instance", required=True)
    s.add_argument("--algorithm", required=True, choices=ALGORITHMS)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--kmax", type=int, default=DEFAULT_KMAX)
    s.add_argument("--beta", type=float, default=1e-3)
    s.add_argument("--alpha", type=float, help="override the instance's confidence level")
    s.add_argument("--out")

    g = sub.add_parser("gen", help="write generated instance files")
    g.add_argument("--config", required=True)
    g.add_argument("--out-dir")

    r = sub.add_parser("suite", help="run an experiment suite")
    r.add_argument("--config", required=True)
    r.add_argument("--out-dir")
    r.add_argument("--jobs", type=int)

    p = sub.add_parser("report", help="summarise suite results")
    p.add_argument("--in", dest="inputs", required=True, nargs="+")
    p.add_argument("--out")
    return ap


def _load_config(path) -> SuiteConfig:
    try:
        return SuiteConfig.load(path)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise InvalidInput(f"{path}: {exc}") from exc


def _solve(args):
    try:
        instance, amb = load_instance(args.instance)
    except (OSError, ValueError) as exc:
        raise InvalidInput(str(exc)) from exc
    amb = amb or AmbiguitySpec(10, 0.05, 10)
    if args.alpha is not None:
        if not 0 < args.alpha < 1:
            raise InvalidInput("--alpha must lie in (0, 1)")
        amb = AmbiguitySpec(amb.N, args.alpha, amb.n_probs, amb.p_hat, amb.samples)
    try:
        theta, p_hat = build_theta(instance, amb) if args.algorithm not in ("RO",) else (None, None)
    except ValueError as exc:
        raise InvalidInput(str(exc)) from exc
    a = args.algorithm
    eps = args.epsilon
    if a == "P":
        rep = solve_exact_P(instance, theta)
    elif a == "CS":
        rep = solve_CS(instance, theta, epsilon=eps or DEFAULT_EPSILON, k_max=args.kmax)
    elif a == "CS_opt":
        rep = solve_CS_opt(instance, theta, epsilon=eps or DEFAULT_EPSILON, k_max=args.kmax)
    elif a == "AO":
        rep = solve_AO(instance, theta, args.beta)
    elif a == "RO":
        rep = solve_RO(instance)
    elif a == "oracle":
        rep = solve_oracle(instance, theta)
    elif a == "benders":
        rep = solve_benders(instance, theta, eps or 1e-8)
    else:
        ambn = NonparametricAmbiguity.from_p_hat(instance.i_max, p_hat, amb.N, amb.alpha)
        rep = solve_NP(instance, ambn, epsilon=eps or 1e-4)
    record = {"algorithm": rep.algorithm, "y": str(rep.plan), "plan": rep.plan.as_list(),
              "p": list(rep.p) if rep.p is not None else None, "objective": rep.objective,
              "iterations": rep.iterations, "pmf_tables": rep.pmf_tables, "evaluator_calls": rep.evaluator_calls,
              "wall_time_ms": round(1000 * rep.wall_time, 3), "converged": rep.converged,
              "stop_reason": rep.stop_reason, "theta_size": len(theta) if theta is not None else None,
              "trace": [{"k": r.k, "y": str(r.plan), "t": r.t, "p": list(r.p_sep) if r.p_sep else None, "C": r.C}
                        for r in rep.trace]}
    if a == "RO":
        record["worst_intake"] = list(rep.extra["worst_intake"])
    if a == "AO":
        record["truncated_objective"] = rep.extra["truncated_objective"]
    return record


def _emit(record_or_rows, fmt, out, columns=None):
    if fmt == "json":
        text = json.dumps(record_or_rows, indent=2, default=_json_default) + "\n"
        if out:
            Path(out).write_text(text)
        else:
            sys.stdout.write(text)
        return
    rows = record_or_rows if isinstance(record_or_rows, list) else [record_or_rows]
    if out:
        write_csv(out, columns, rows)
    else:
        import csv

        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(columns)
        from .io import fmt as cell

        for r in rows:
            w.writerow([cell(r.get(c)) for c in columns])


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _clean(obj):
    """Replace non-finite floats so the JSON output stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "solve":
            _emit(_solve(args), args.format, args.out, SOLVE_COLUMNS)
        elif args.command == "gen":
            cfg = _load_config(args.config)
            out = args.out_dir or os.environ.get("DRO_PLANNING_OUT_DIR") or cfg.out_dir
            paths = write_instances(cfg, out)
            print(f"wrote {len(paths)} instances to {out}")
        elif args.command == "suite":
            cfg = _load_config(args.config)
            jobs = args.jobs or os.environ.get("DRO_PLANNING_JOBS")
            if jobs is not None:
                cfg.jobs = int(jobs)
            paths = run_suite(cfg, args.out_dir)
            print(json.dumps({k: str(v) for k, v in paths.items()}))
        elif args.command == "report":
            try:
                rep = aggregate_report(args.inputs)
            except (OSError, SchemaError) as exc:
                raise InvalidInput(str(exc)) from exc
            if args.format == "json":
                _emit(_clean(rep), "json", args.out)
            else:
                _emit(report_rows(rep), "csv", args.out, ("section", "group", "algorithm", "metric", "value"))
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, ArithmeticError, AssertionError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
