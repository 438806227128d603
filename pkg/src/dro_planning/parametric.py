"""Parametric DRO solvers over a finite set of binomial success-probability vectors.

Algorithms: exact min-max (``P``), the cutting-surface loop in its two
variants (``CS_opt`` separates over the full set, ``CS`` over the extreme
members only), the reduced-intake approximation (``AO``), the robust
baseline (``RO``), a brute-force oracle, and Benders decomposition.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .expectation import PMFCache, expected_cost_convolution, scenario_costs
from .intake import (DEFAULT_BETA, IntakeSpace, ParametricAmbiguitySet, build_extreme_set, joint_pmf_all,
                     reduce_intake_set)
from .lp import LinearProgram, lp_solve, mip_solve
from .minmax import (TIE_TOL, BinomialEvaluator, CostEvaluator, PlanLattice, ScenarioEvaluator, build_lattice,
                     solve_min_max)
from .planning import Instance, PullForwardPlan, day_shifts, feasible_pairs, lindley

DEFAULT_EPSILON = 0.01
DEFAULT_KMAX = 10


@dataclass
class IterationRecord:
    k: int
    pool: List[Tuple[float, ...]]
    plan: PullForwardPlan
    t: float
    p_sep: Optional[Tuple[float, ...]] = None
    C: Optional[float] = None
    note: Dict[str, Any] = field(default_factory=dict)


@dataclass
class SolveReport:
    """Outcome of one solver run.

    ``objective`` is ``f(plan, p)`` for the reported ``p`` (parametric
    algorithms), the deterministic cost at ``i_max`` (RO), or the worst-case
    expectation over the divergence ball (NP).
    """

    algorithm: str
    plan: PullForwardPlan
    p: Optional[Tuple[float, ...]]
    objective: float
    iterations: int = 1
    trace: List[IterationRecord] = field(default_factory=list)
    pmf_tables: int = 0
    evaluator_calls: int = 0
    wall_time: float = 0.0
    converged: bool = True
    stop_reason: str = "optimal"
    extra: Dict[str, Any] = field(default_factory=dict)


def _as_theta(theta) -> ParametricAmbiguitySet:
    if isinstance(theta, ParametricAmbiguitySet):
        return theta
    return ParametricAmbiguitySet.from_members(theta)


def _calls(evaluators) -> int:
    return sum(e.calls for e in evaluators)


def solve_exact_P(instance: Instance, theta, lattice: Optional[PlanLattice] = None,
                  strategy: str = "exact") -> SolveReport:
    """Exact min-max over every member of ``theta``."""
    start = time.perf_counter()
    theta = _as_theta(theta)
    cache = PMFCache(instance.i_max)
    evaluators = [BinomialEvaluator(instance, p, cache) for p in theta]
    sol = solve_min_max(instance, evaluators, strategy=strategy, lattice=lattice)
    p = evaluators[sol.active_index].p
    rec = IterationRecord(1, [], sol.plan, sol.objective, p, sol.objective,
                          {"activated": [evaluators[d].p for d in sol.activated]})
    return SolveReport("P", sol.plan, p, sol.objective, 1, [rec], cache.constructions, _calls(evaluators),
                       time.perf_counter() - start)


def distribution_separation(instance: Instance, plan: PullForwardPlan, candidates,
                            cache: Optional[PMFCache] = None, tol: float = TIE_TOL):
    """Worst member of ``candidates`` for a fixed plan: ``(p*, C_{p*})``.

    Members are scanned in lexicographic order and the first one within
    ``tol`` of the maximum wins.
    """
    candidates = _as_theta(candidates)
    cache = cache if cache is not None else PMFCache(instance.i_max)
    members = list(candidates)
    costs = np.array([expected_cost_convolution(instance, plan, p, cache) for p in members])
    k = int(np.flatnonzero(costs >= costs.max() - tol)[0])
    return tuple(float(v) for v in members[k]), float(costs[k])


def solve_cutting_surface(instance: Instance, theta_full, theta_sep=None, p_init=None,
                          epsilon: float = DEFAULT_EPSILON, k_max: int = DEFAULT_KMAX,
                          lattice: Optional[PlanLattice] = None, algorithm: Optional[str] = None) -> SolveReport:
    """Cutting-surface loop.

    The pool starts as ``{p_init}``; each iteration solves the master over the
    pool, separates over ``theta_sep`` and either stops (the separated
    parameter is already pooled, or its cost is within ``epsilon / 2`` of the
    master value) or grows the pool.

    ``theta_sep=None`` means the extreme subset of ``theta_full`` (CS);
    passing ``theta_full`` itself gives CS_opt.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    start = time.perf_counter()
    theta_full = _as_theta(theta_full)
    if theta_sep is None:
        theta_sep = build_extreme_set(theta_full)
        algorithm = algorithm or "CS"
    else:
        theta_sep = _as_theta(theta_sep)
        algorithm = algorithm or ("CS_opt" if theta_sep is theta_full else "CS")
    if p_init is None:
        p_init = theta_full.p_hat if theta_full.p_hat is not None else next(iter(theta_full))
    p_init = tuple(float(v) for v in p_init)
    lattice = lattice if lattice is not None else build_lattice(instance)
    cache = PMFCache(instance.i_max)
    evals: Dict[Tuple[float, ...], BinomialEvaluator] = {}
    pool: List[Tuple[float, ...]] = [p_init]
    trace: List[IterationRecord] = []
    sep_calls = 0
    stop = "k_max"
    for k in range(1, k_max + 1):
        for p in pool:
            if p not in evals:
                evals[p] = BinomialEvaluator(instance, p, cache)
        sol = solve_min_max(instance, [evals[p] for p in pool], lattice=lattice)
        p_k, C = distribution_separation(instance, sol.plan, theta_sep, cache)
        sep_calls += len(theta_sep)
        trace.append(IterationRecord(k, list(pool), sol.plan, sol.objective, p_k, C))
        if _pooled(p_k, pool):
            # a pooled parameter cannot cost more than the master maximum
            assert C <= sol.objective + epsilon / 2 + 1e-9, "repeat stop without tolerance stop"
            stop = "repeat"
            break
        if C <= sol.objective + epsilon / 2:
            stop = "tolerance"
            break
        pool.append(p_k)
    converged = stop != "k_max"
    final = trace[-1]
    if not converged:
        final = min(trace, key=lambda r: r.C)
    calls = _calls(evals.values()) + sep_calls
    return SolveReport(algorithm, final.plan, final.p_sep, final.C, len(trace), trace, cache.constructions, calls,
                       time.perf_counter() - start, converged, stop,
                       {"theta_sep_size": len(theta_sep)})


def _pooled(p, pool, tol=1e-12) -> bool:
    return any(max(abs(a - b) for a, b in zip(p, q)) < tol for q in pool)


def solve_CS(instance, theta, **kw) -> SolveReport:
    return solve_cutting_surface(instance, theta, None, **kw)


def solve_CS_opt(instance, theta, **kw) -> SolveReport:
    theta = _as_theta(theta)
    return solve_cutting_surface(instance, theta, theta, algorithm="CS_opt", **kw)


def solve_AO(instance: Instance, theta, beta: float = DEFAULT_BETA,
             lattice: Optional[PlanLattice] = None) -> SolveReport:
    """Min-max over ``theta`` with expectations truncated to the likely intakes."""
    start = time.perf_counter()
    theta = _as_theta(theta)
    reduced = reduce_intake_set(theta, instance.i_max, beta)
    intakes = reduced.intakes()
    cache = PMFCache(instance.i_max)
    members = list(theta)
    evaluators = []
    for p in members:
        marg = cache.marginals(p)
        w = np.ones(len(intakes))
        for t, table in enumerate(marg):
            w *= table[intakes[:, t]]
        evaluators.append(ScenarioEvaluator(instance, intakes, w, label=str(p)))
    sol = solve_min_max(instance, evaluators, lattice=lattice)
    p = tuple(float(v) for v in members[sol.active_index])
    exact = expected_cost_convolution(instance, sol.plan, p, cache)
    rec = IterationRecord(1, [], sol.plan, sol.objective, p, exact, {"truncated_objective": sol.objective})
    return SolveReport("AO", sol.plan, p, exact, 1, [rec], len(theta), _calls(evaluators),
                       time.perf_counter() - start,
                       extra={"truncated_objective": sol.objective, "reduced_size": len(reduced), "beta": beta})


def solve_RO(instance: Instance, lattice: Optional[PlanLattice] = None) -> SolveReport:
    """Deterministic plan against the largest intake ``i_max`` (the robust worst case)."""
    start = time.perf_counter()
    ev = ScenarioEvaluator(instance, np.asarray([instance.i_max]), np.ones(1), label="i_max")
    sol = solve_min_max(instance, [ev], lattice=lattice)
    return SolveReport("RO", sol.plan, None, sol.objective, 1, [], 0, ev.calls, time.perf_counter() - start,
                       extra={"worst_intake": tuple(instance.i_max)})


def robust_worst_intake(instance: Instance, plan: PullForwardPlan, space: Optional[IntakeSpace] = None):
    """Brute-force worst intake for ``plan`` (used to confirm that it is ``i_max``)."""
    space = space or IntakeSpace(instance.i_max)
    costs = scenario_costs(instance, space.all_intakes(), day_shifts(instance, plan))
    # Lindley is monotone in the intake, so i_max always attains the maximum;
    # report the lexicographically largest maximiser to surface it on ties
    k = int(np.flatnonzero(costs >= costs.max())[-1])
    return space.vector(k), float(costs[k])


def solve_oracle(instance: Instance, theta, lattice: Optional[PlanLattice] = None) -> SolveReport:
    """Brute force: full cost tables for every member over every plan class."""
    start = time.perf_counter()
    theta = _as_theta(theta)
    lattice = lattice if lattice is not None else build_lattice(instance)
    cache = PMFCache(instance.i_max)
    evaluators = [BinomialEvaluator(instance, p, cache) for p in theta]
    table = np.vstack([e.table(lattice) for e in evaluators])
    worst = table.max(axis=0)
    best = int(np.flatnonzero(worst <= worst.min() + TIE_TOL)[0])
    col = table[:, best]
    d = int(np.flatnonzero(col >= col.max() - TIE_TOL)[0])
    plan = lattice.plan(best)
    return SolveReport("oracle", plan, evaluators[d].p, float(col[d]), 1, [], cache.constructions,
                       _calls(evaluators), time.perf_counter() - start)


@dataclass
class GapMetrics:
    worst_cost: float
    p_gap: float
    y_gap: float
    p_apg: float
    y_apg: float

    def as_tuple(self):
        return (self.p_gap, self.y_gap, self.p_apg, self.y_apg)


def _apg(gap, ref):
    if gap == 0:
        return 0.0
    return 100.0 * abs(gap) / abs(ref) if ref != 0 else math.inf


def brute_force_metrics(instance: Instance, theta, report: SolveReport, z_star: float,
                        cache: Optional[PMFCache] = None) -> GapMetrics:
    """p-gap and y-gap of a reported solution against brute force over ``theta``."""
    _, worst = distribution_separation(instance, report.plan, theta, cache)
    g_p = worst - report.objective
    g_y = worst - z_star
    return GapMetrics(worst, g_p, g_y, _apg(g_p, worst), _apg(g_y, z_star))


# ----------------------------------------------------------------------------
# Benders decomposition
# ----------------------------------------------------------------------------

@dataclass
class BendersState:
    LB: List[float] = field(default_factory=list)
    UB: List[float] = field(default_factory=list)
    optimality_cuts: List[Tuple[float, np.ndarray]] = field(default_factory=list)
    feasibility_cuts: List[Tuple[float, np.ndarray]] = field(default_factory=list)
    u: Optional[np.ndarray] = None  # duals of the rollover rows, shape (|I|, L)
    v: Optional[np.ndarray] = None  # duals of the expectation rows, shape (|Theta|,)


class _Residual:
    """Residual problem at a fixed plan and the pieces of its right-hand side.

    Rollover rows read ``R[j,t] - R[j,t-1] >= b[j,t](y)`` with
    ``b[j,t](y) = i[j,t] - spare[t] + (B y)[t]``; expectation rows read
    ``t - sum_j W[k,j] sum_t a[t] R[j,t] >= 0`` (right-hand side ``0``).
    """

    def __init__(self, instance: Instance, theta: ParametricAmbiguitySet):
        self.instance = instance
        self.space = IntakeSpace(instance.i_max)
        self.intakes = self.space.all_intakes()
        self.members = [tuple(float(v) for v in p) for p in theta]
        self.W = np.vstack([joint_pmf_all(p, self.space) for p in self.members])
        self.pairs = feasible_pairs(instance).feasible_pairs
        L = instance.L
        B = np.zeros((L, len(self.pairs)))
        for k, (t1, t2) in enumerate(self.pairs):
            B[t2 - 1, k] += 1.0
            B[t1 - 1, k] -= 1.0
        self.B = B
        self.b0 = self.intakes - instance.spare[None, :]

    def b(self, y: np.ndarray) -> np.ndarray:
        return self.b0 + (self.B @ y)[None, :]

    def primal(self, y):
        R = lindley(self.intakes, (self.B @ y) - self.instance.spare)
        costs = self.W @ (R @ self.instance.a)
        return R, costs

    def analytic_dual(self, y):
        """Dual solution built from complementary slackness on the rollover chain."""
        R, costs = self.primal(y)
        k = int(np.flatnonzero(costs >= costs.max() - TIE_TOL)[0])
        a = self.instance.a
        L = self.instance.L
        mu = np.zeros_like(R)
        nxt = np.zeros(len(R))
        for t in range(L - 1, -1, -1):
            mu[:, t] = np.where(R[:, t] > 0, a[t] + nxt, 0.0)
            nxt = mu[:, t]
        u = self.W[k][:, None] * mu
        v = np.zeros(len(self.members))
        v[k] = 1.0
        return u, v, float(costs[k]), k

    def lp_dual(self, y):
        """The same dual, solved as an explicit LP (small instances only)."""
        J, L = self.intakes.shape
        n_k = len(self.members)
        a = self.instance.a
        b = self.b(y)
        lp = LinearProgram(maximize=True)
        for j in range(J):
            for t in range(L):
                lp.add_var(b[j, t], 0.0, math.inf)
        v0 = lp.n_vars
        for k in range(n_k):
            lp.add_var(0.0, 0.0, math.inf)
        lp.add_row({v0 + k: 1.0 for k in range(n_k)}, "<=", 1.0)
        for j in range(J):
            for t in range(L):
                row = {j * L + t: 1.0}
                if t + 1 < L:
                    row[j * L + t + 1] = -1.0
                for k in range(n_k):
                    row[v0 + k] = -self.W[k, j] * a[t]
                lp.add_row(row, "<=", 0.0)
        res = lp_solve(lp)
        if res.status == "unbounded":
            return "unbounded", res.ray[:J * L].reshape(J, L), None, math.inf, -1
        if res.status != "optimal":
            raise RuntimeError(f"Benders subproblem LP failed with status {res.status}")
        u = res.x[:J * L].reshape(J, L)
        v = res.x[v0:]
        k = int(np.argmax(v))
        return "optimal", u, v, res.objective, k

    def cut(self, u):
        """Cut ``z >= alpha + beta . y`` from rollover-row duals ``u``."""
        alpha = float(np.sum(u * self.b0))
        beta = self.B.T @ u.sum(axis=0)
        return alpha, beta


def solve_benders(instance: Instance, theta, epsilon: float = 1e-8, max_iter: int = 500,
                  subproblem: str = "analytic", state: Optional[BendersState] = None) -> SolveReport:
    """Benders decomposition: integer master over plans, residual LP per iterate."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if subproblem not in ("analytic", "lp"):
        raise ValueError(f"unknown subproblem route {subproblem!r}")
    start = time.perf_counter()
    theta = _as_theta(theta)
    res = _Residual(instance, theta)
    state = state if state is not None else BendersState()
    pairs = res.pairs
    master = LinearProgram()
    for (t1, t2) in pairs:
        master.add_var(0.0, 0, min(instance.workstack[t1 - 1], max(int(instance.spare[t2 - 1]), 0)), integer=True)
    z = master.add_var(1.0, 0.0, math.inf)  # costs are non-negative
    # out-of and into bounds
    for day in range(1, instance.L + 1):
        out = {k: 1.0 for k, (t1, _) in enumerate(pairs) if t1 == day}
        if out:
            master.add_row(out, "<=", float(instance.workstack[day - 1]))
        into = {k: 1.0 for k, (_, t2) in enumerate(pairs) if t2 == day}
        if into:
            master.add_row(into, "<=", float(max(int(instance.spare[day - 1]), 0)))
    y = np.zeros(len(pairs))
    LB, UB = 0.0, math.inf
    best_y, best_k = y, 0
    trace = []
    it = 0
    stop = "max_iter"
    while it < max_iter:
        it += 1
        if subproblem == "analytic":
            u, v, value, k = res.analytic_dual(y)
            status = "optimal"
        else:
            status, u, v, value, k = res.lp_dual(y)
        if status == "unbounded":
            alpha, beta = res.cut(u)
            state.feasibility_cuts.append((alpha, beta))
            row = {i: -float(bv) for i, bv in enumerate(beta) if bv}
            master.add_row(row, ">=", alpha)
        else:
            alpha, beta = res.cut(u)
            state.optimality_cuts.append((alpha, beta))
            state.u, state.v = u, v
            if value < UB:
                UB, best_y, best_k = value, y.copy(), k
            row = {i: -float(bv) for i, bv in enumerate(beta) if bv}
            row[z] = 1.0
            master.add_row(row, ">=", alpha)
        m = mip_solve(master)
        if m.status != "optimal":
            raise RuntimeError(f"Benders master ended with status {m.status}")
        LB = m.objective
        if state.LB and (LB < state.LB[-1] - 1e-9 or UB > state.UB[-1] + 1e-9):
            raise AssertionError("Benders bounds lost monotonicity")
        state.LB.append(LB)
        state.UB.append(UB)
        trace.append(IterationRecord(it, [], PullForwardPlan.from_vector(pairs, np.round(y).astype(int)),
                                     LB, res.members[k] if status == "optimal" else None, value,
                                     {"UB": UB}))
        if UB - LB <= epsilon:
            stop = "gap"
            break
        y = np.round(m.x[:len(pairs)])
    plan = PullForwardPlan.from_vector(pairs, np.round(best_y).astype(int))
    p = res.members[best_k]
    objective = expected_cost_convolution(instance, plan, p)
    return SolveReport("benders", plan, p, objective, it, trace, len(res.members), it * len(res.members),
                       time.perf_counter() - start, stop == "gap", stop,
                       {"LB": state.LB[-1], "UB": state.UB[-1], "state": state})
