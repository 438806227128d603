"""Instance generation, suite execution and summary tables."""
from __future__ import annotations

import itertools
import json
import logging
import math
import os
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .expectation import PMFCache
from .intake import (IntakeSpace, build_confidence_set, clamp_p_hat, joint_pmf_all, space_cardinality)
from .io import AmbiguitySpec, SchemaError, read_csv, save_instance, write_csv
from .minmax import build_lattice
from .nonparametric import NP_MAX_SCENARIOS, NonparametricAmbiguity, distribution_summary, solve_NP
from .parametric import (brute_force_metrics, solve_AO, solve_benders, solve_CS, solve_CS_opt, solve_exact_P,
                         solve_oracle, solve_RO)
from .planning import Instance, all_pairs, feasible_pairs

log = logging.getLogger(__name__)

ALGORITHMS = ("P", "CS", "CS_opt", "AO", "NP", "RO", "benders", "oracle")
RESULT_COLUMNS = ("instance_id", "algorithm", "y", "p", "objective", "p_gap", "y_gap", "p_apg", "y_apg",
                  "iterations", "pmf_tables", "evaluator_calls", "wall_time_ms",
                  "status", "converged", "stop_reason", "worst_cost", "z_star",
                  "L", "K", "n_pairs", "n_imax", "intake_size", "theta_size", "N", "n_probs")
DIST_COLUMNS = ("instance_id", "algorithm", "divergence", "kld", "entropy", "total_ev", "total_variance",
                "total_skewness", "popped", "suppressed")
GAP_TOL = 1e-6


@dataclass
class SuiteConfig:
    """Experiment grid.

    Spare-capacity patterns (``c - D`` per day) are either given explicitly
    or derived from target pair counts; ``capacity`` is the same on every day
    and the workstack is ``capacity - pattern``.
    """

    horizons: List[Tuple[int, int]] = field(default_factory=lambda: [(5, 2)])
    capacity: int = 30
    spare_patterns: Optional[List[List[int]]] = None
    pair_targets: Optional[List[int]] = None
    spare_high: int = 8
    spare_low: int = -15
    imax_targets: Optional[List[int]] = None  # default {1, L // 2, L - 1}
    imax_extra: int = 2  # high days get up to this many jobs above their spare capacity
    N_values: List[int] = field(default_factory=lambda: [10, 50, 100])
    alpha: float = 0.05
    n_probs_values: List[int] = field(default_factory=lambda: [5, 10, 15])
    p_hat: float = 0.75
    algorithms: List[str] = field(default_factory=lambda: ["CS", "CS_opt", "AO"])
    epsilon: float = 0.01
    k_max: int = 10
    beta: float = 1e-3
    benders_epsilon: float = 1e-8
    np_k: Optional[int] = None
    max_intake_size: Optional[int] = None
    max_theta_size: Optional[int] = None
    out_dir: str = "results"
    jobs: int = 1
    seed: int = 0

    def __post_init__(self):
        self.horizons = [tuple(h) for h in self.horizons]
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ValueError(f"unknown algorithms {bad}; choose from {ALGORITHMS}")

    @classmethod
    def from_dict(cls, doc: dict) -> "SuiteConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise SchemaError(f"unknown config keys {sorted(extra)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "SuiteConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class GeneratedInstance:
    id: str
    instance: Instance
    ambiguity: AmbiguitySpec
    tags: Dict[str, int]


def count_feasible_pairs(spare: Sequence[int], workstack: Sequence[int], K: int) -> int:
    L = len(spare)
    return sum(1 for t1, t2 in all_pairs(L, K) if spare[t2 - 1] > 0 and workstack[t1 - 1] > 0)


def n_high_days(i_max: Sequence[int], spare: Sequence[int]) -> int:
    return int(sum(1 for m, s in zip(i_max, spare) if m > s))


def patterns_for_targets(L: int, K: int, targets: Sequence[int], high: int, low: int) -> List[List[int]]:
    """First spare-day subset (by size, then lexicographically) reaching each target pair count."""
    out = []
    for target in targets:
        found = None
        for size in range(L + 1):
            for days in itertools.combinations(range(L), size):
                pat = [high if t in days else low for t in range(L)]
                if count_feasible_pairs(pat, [1] * L, K) == target:
                    found = pat
                    break
            if found:
                break
        if found is None:
            log.warning("no spare pattern gives %d feasible pairs for L=%d, K=%d; skipped", target, L, K)
        else:
            out.append(found)
    return out


def imax_for_target(spare: Sequence[int], target: int, rng: np.random.Generator, extra: int) -> Optional[List[int]]:
    """Intake bounds with exactly ``target`` high days under the total-intake budget.

    Deficit days are always high.  Remaining high days are drawn among days
    with spare capacity; values are scaled down proportionally when the
    budget is exceeded, and ``None`` is returned when the target cannot
    survive the scaling.
    """
    L = len(spare)
    deficit = [t for t in range(L) if spare[t] <= 0]
    spare_days = [t for t in range(L) if spare[t] > 0]
    need = target - len(deficit)
    if need < 0 or need > len(spare_days):
        return None
    chosen = set(deficit) | set(rng.choice(spare_days, size=need, replace=False).tolist() if need else [])
    i_max = []
    for t in range(L):
        s = spare[t]
        if t in chosen:
            base = max(s, 0) + 1
            i_max.append(base + int(rng.integers(0, extra + 1)))
        else:
            i_max.append(int(rng.integers(1, max(1, s // 2) + 1)))
    budget = sum(max(s, 0) for s in spare)
    total = sum(i_max)
    if total > budget:
        # every day keeps at least one possible arrival
        i_max = [max(1, int(math.floor(m * budget / total))) for m in i_max]
    if sum(i_max) > budget or n_high_days(i_max, spare) != target:
        return None
    return i_max


def generate_instances(config: SuiteConfig, skipped: Optional[List[str]] = None) -> List[GeneratedInstance]:
    """Seeded cartesian product of patterns x intake bounds x (N, n_probs)."""
    rng = np.random.default_rng(config.seed)
    skipped = skipped if skipped is not None else []
    out = []
    for L, K in config.horizons:
        if config.spare_patterns is not None:
            patterns = [list(p) for p in config.spare_patterns if len(p) == L]
        else:
            targets = config.pair_targets or [len(all_pairs(L, K))]
            patterns = patterns_for_targets(L, K, targets, config.spare_high, config.spare_low)
        targets = config.imax_targets or sorted({1, L // 2, L - 1})
        for pi, pattern in enumerate(patterns):
            workstack = [config.capacity - s for s in pattern]
            if min(workstack) <= 0:
                raise ValueError(f"pattern {pattern} leaves a non-positive workstack")
            for target in targets:
                i_max = imax_for_target(pattern, target, rng, config.imax_extra)
                if i_max is None:
                    msg = f"L={L} K={K} pattern={pattern}: n(i_max)={target} infeasible under the intake budget"
                    log.info(msg)
                    skipped.append(msg)
                    continue
                size = space_cardinality(i_max)
                if config.max_intake_size and size > config.max_intake_size:
                    msg = f"L={L} K={K} pattern={pattern} i_max={i_max}: |I|={size} above cap"
                    log.info(msg)
                    skipped.append(msg)
                    continue
                for N, n_probs in itertools.product(config.N_values, config.n_probs_values):
                    iid = f"L{L}K{K}-c{pi}-m{target}-N{N}-n{n_probs}"
                    inst = Instance(L, K, [config.capacity] * L, workstack, [1.0] * L, i_max, name=iid)
                    amb = AmbiguitySpec(N, config.alpha, n_probs, tuple([config.p_hat] * L))
                    tags = {"L": L, "K": K, "n_pairs": len(feasible_pairs(inst).feasible_pairs),
                            "n_imax": n_high_days(i_max, pattern), "intake_size": size}
                    out.append(GeneratedInstance(iid, inst, amb, tags))
    return out


def build_theta(instance: Instance, amb: AmbiguitySpec):
    p_hat = clamp_p_hat(amb.resolve_p_hat(instance.i_max), amb.N, instance.i_max)
    return build_confidence_set(p_hat, amb.N, instance.i_max, amb.alpha, amb.n_probs), p_hat


def _row(gi: GeneratedInstance, algorithm: str, theta_size: int) -> dict:
    row = {"instance_id": gi.id, "algorithm": algorithm, "theta_size": theta_size,
           "N": gi.ambiguity.N, "n_probs": gi.ambiguity.n_probs}
    row.update(gi.tags)
    return row


def run_instance(gi: GeneratedInstance, config: SuiteConfig):
    """Reference solve, every configured algorithm, and gap metrics for one instance."""
    rows, dists = [], []
    theta, p_hat = build_theta(gi.instance, gi.ambiguity)
    if config.max_theta_size and len(theta) > config.max_theta_size:
        row = _row(gi, "P", len(theta))
        row.update(status="skipped", stop_reason=f"|Theta|={len(theta)} above cap")
        return [row], []
    lattice = build_lattice(gi.instance)
    ref = solve_exact_P(gi.instance, theta, lattice=lattice)
    z_star = ref.objective
    cache = PMFCache(gi.instance.i_max)
    small = gi.tags["intake_size"] <= NP_MAX_SCENARIOS
    space = IntakeSpace(gi.instance.i_max) if small else None
    q_hat = joint_pmf_all(p_hat, space) if small else None
    for name in ["P"] + [a for a in config.algorithms if a != "P"]:
        row = _row(gi, name, len(theta))
        try:
            start = time.perf_counter()
            if name == "P":
                rep = ref
            elif name == "CS":
                rep = solve_CS(gi.instance, theta, epsilon=config.epsilon, k_max=config.k_max, lattice=lattice)
            elif name == "CS_opt":
                rep = solve_CS_opt(gi.instance, theta, epsilon=config.epsilon, k_max=config.k_max, lattice=lattice)
            elif name == "AO":
                rep = solve_AO(gi.instance, theta, config.beta, lattice=lattice)
            elif name == "RO":
                rep = solve_RO(gi.instance, lattice=lattice)
            elif name == "oracle":
                rep = solve_oracle(gi.instance, theta, lattice=lattice)
            elif name == "benders":
                rep = solve_benders(gi.instance, theta, config.benders_epsilon)
            elif name == "NP":
                amb = NonparametricAmbiguity.from_p_hat(gi.instance.i_max, p_hat, gi.ambiguity.N,
                                                        gi.ambiguity.alpha, config.np_k)
                rep = solve_NP(gi.instance, amb, lattice=lattice)
            wall = rep.wall_time if name == "P" else time.perf_counter() - start
            gaps = brute_force_metrics(gi.instance, theta, rep, z_star, cache)
            row.update(y=str(rep.plan), p=_fmt_p(rep), objective=rep.objective, p_gap=gaps.p_gap,
                       y_gap=gaps.y_gap, p_apg=gaps.p_apg, y_apg=gaps.y_apg, iterations=rep.iterations,
                       pmf_tables=rep.pmf_tables, evaluator_calls=rep.evaluator_calls,
                       wall_time_ms=round(1000 * wall, 3), status="ok", converged=rep.converged,
                       stop_reason=rep.stop_reason, worst_cost=gaps.worst_cost, z_star=z_star)
            if small and name == "P":
                dists.append(_dist_row(gi.id, "P", joint_pmf_all(rep.p, space), q_hat, gi.instance.i_max))
            if name == "NP":
                dists.append(_dist_row(gi.id, "NP", rep.extra["P"], q_hat, gi.instance.i_max))
        except Exception as exc:  # recorded, never aborts the suite
            log.error("instance %s algorithm %s failed: %s", gi.id, name, exc)
            row.update(status="error", stop_reason=f"{type(exc).__name__}: {exc}".replace("\n", " "))
            log.debug(traceback.format_exc())
        rows.append(row)
    return rows, dists


def _fmt_p(rep) -> str:
    if rep.p is not None:
        return "(" + ",".join(f"{v:.10g}" for v in rep.p) + ")"
    if "distribution_hash" in rep.extra:
        return "P#" + rep.extra["distribution_hash"]
    if "worst_intake" in rep.extra:
        return "i=" + ",".join(str(v) for v in rep.extra["worst_intake"])
    return ""


def _dist_row(iid, algorithm, P, Q, i_max) -> dict:
    s = distribution_summary(P, Q, i_max)
    return {"instance_id": iid, "algorithm": algorithm, **asdict(s)}


def _run_one(args):
    gi, config = args
    return run_instance(gi, config)


def _versions() -> dict:
    import scipy

    return {"dro_planning": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def run_suite(config: SuiteConfig, out_dir=None) -> Dict[str, Path]:
    """Run every generated instance; write ``results.csv``, ``distributions.csv`` and ``manifest.json``."""
    out = Path(out_dir or os.environ.get("DRO_PLANNING_OUT_DIR") or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    skipped: List[str] = []
    instances = generate_instances(config, skipped)
    rows, dists = [], []
    if config.algorithms:
        jobs = max(1, int(config.jobs))
        if jobs == 1:
            results = [run_instance(gi, config) for gi in instances]
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_run_one, [(gi, config) for gi in instances]))
        for r, d in results:
            rows.extend(r)
            dists.extend(d)
    order = {a: k for k, a in enumerate(ALGORITHMS)}
    rows.sort(key=lambda r: (r["instance_id"], order.get(r["algorithm"], 99)))
    dists.sort(key=lambda r: (r["instance_id"], order.get(r["algorithm"], 99)))
    paths = {"manifest": out / "manifest.json"}
    if config.algorithms:
        paths["results"] = out / "results.csv"
        paths["distributions"] = out / "distributions.csv"
        write_csv(paths["results"], RESULT_COLUMNS, rows)
        write_csv(paths["distributions"], DIST_COLUMNS, dists)
    manifest = {"config": asdict(config), "seed": config.seed, "versions": _versions(),
                "capacity_note": "capacity fixed per day; workstack = capacity - spare pattern",
                "instances": [{"id": gi.id, "workstack": list(gi.instance.workstack),
                               "capacity": list(gi.instance.capacity), "i_max": list(gi.instance.i_max),
                               **gi.tags} for gi in instances],
                "skipped": skipped}
    paths["manifest"].write_text(json.dumps(manifest, indent=2) + "\n")
    return paths


def write_instances(config: SuiteConfig, out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    skipped: List[str] = []
    paths = []
    for gi in generate_instances(config, skipped):
        p = out / f"{gi.id}.json"
        save_instance(p, gi.instance, gi.ambiguity)
        paths.append(p)
    (out / "manifest.json").write_text(json.dumps(
        {"config": asdict(config), "instances": [p.name for p in paths], "skipped": skipped}, indent=2) + "\n")
    return paths


# ----------------------------------------------------------------------------
# Aggregation
# ----------------------------------------------------------------------------

_REQUIRED = ("instance_id", "algorithm", "objective", "p_gap", "y_gap", "p_apg", "y_apg", "status")


def theta_bucket(size: int) -> str:
    for lo, hi in ((1, 1), (2, 10), (11, 100), (101, 1000)):
        if size <= hi:
            return str(lo) if lo == hi else f"{lo}-{hi}"
    return ">1000"


def _num(v):
    return float(v) if v not in ("", None) else math.nan


def optimality_flags(row, tol: float = GAP_TOL):
    p_opt = abs(_num(row["p_gap"])) <= tol
    y_opt = abs(_num(row["y_gap"])) <= tol
    return p_opt and y_opt, p_opt, y_opt


def _summarise(rows) -> dict:
    n = len(rows)
    flags = [optimality_flags(r) for r in rows]
    for (opt, p_opt, y_opt) in flags:
        assert opt == (p_opt and y_opt)

    def mean(col):
        vals = [_num(r[col]) for r in rows]
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    return {"count": n,
            "optimal": sum(f[0] for f in flags), "p_optimal": sum(f[1] for f in flags),
            "y_optimal": sum(f[2] for f in flags),
            "optimal_pct": 100.0 * sum(f[0] for f in flags) / n if n else math.nan,
            "p_optimal_pct": 100.0 * sum(f[1] for f in flags) / n if n else math.nan,
            "y_optimal_pct": 100.0 * sum(f[2] for f in flags) / n if n else math.nan,
            "mean_p_gap": mean("p_gap"), "mean_p_apg": mean("p_apg"),
            "mean_y_gap": mean("y_gap"), "mean_y_apg": mean("y_apg")}


def aggregate_report(paths: Sequence) -> dict:
    """Optimality counts, mean gaps and grouped breakdowns from results files.

    ``paths`` may name results CSVs or directories holding ``results.csv``
    (and optionally ``distributions.csv``).
    """
    if not paths:
        raise ValueError("aggregate_report needs at least one results file")
    rows, dists = [], []
    for p in paths:
        p = Path(p)
        res = p / "results.csv" if p.is_dir() else p
        rows.extend(read_csv(res, _REQUIRED))
        dpath = res.parent / "distributions.csv"
        if dpath.exists():
            dists.extend(read_csv(dpath, DIST_COLUMNS))
    ok = [r for r in rows if r["status"] == "ok"]
    algorithms = sorted({r["algorithm"] for r in ok}, key=lambda a: ALGORITHMS.index(a) if a in ALGORITHMS else 99)
    report = {"rows": len(rows), "failed": sum(r["status"] == "error" for r in rows),
              "skipped": sum(r["status"] == "skipped" for r in rows),
              "overall": {a: _summarise([r for r in ok if r["algorithm"] == a]) for a in algorithms},
              "by_theta": {}, "by_intake_size": {}, "by_n_pairs": {}}
    for key, fn in (("by_theta", lambda r: theta_bucket(int(r["theta_size"]))),
                    ("by_intake_size", lambda r: r["intake_size"]),
                    ("by_n_pairs", lambda r: r["n_pairs"])):
        groups: Dict[str, Dict[str, list]] = {}
        for r in ok:
            if key != "by_theta" and r.get(key.replace("by_", "")) in (None, ""):
                continue
            groups.setdefault(str(fn(r)), {}).setdefault(r["algorithm"], []).append(r)
        report[key] = {g: {a: _summarise(v) for a, v in by.items()} for g, by in sorted(groups.items())}
    if dists:
        cols = [c for c in DIST_COLUMNS if c not in ("instance_id", "algorithm")]
        table = {}
        for a in sorted({d["algorithm"] for d in dists}):
            sel = [d for d in dists if d["algorithm"] == a]
            table[a] = {c: float(np.mean([_num(d[c]) for d in sel])) for c in cols}
        if "P" in table and "NP" in table:
            table["pct_gap"] = {c: (100.0 * (table["NP"][c] - table["P"][c]) / abs(table["P"][c])
                                    if table["P"][c] else math.nan) for c in cols}
        report["distributions"] = table
    return report


def report_rows(report: dict) -> List[dict]:
    """Flatten a report into CSV-ready rows (``section, group, algorithm, metric, value``)."""
    out = []
    for a, s in report["overall"].items():
        for k, v in s.items():
            out.append({"section": "overall", "group": "", "algorithm": a, "metric": k, "value": v})
    for section in ("by_theta", "by_intake_size", "by_n_pairs"):
        for g, by in report[section].items():
            for a, s in by.items():
                for k, v in s.items():
                    out.append({"section": section, "group": g, "algorithm": a, "metric": k, "value": v})
    for a, s in report.get("distributions", {}).items():
        for k, v in s.items():
            out.append({"section": "distributions", "group": "", "algorithm": a, "metric": k, "value": v})
    return out
