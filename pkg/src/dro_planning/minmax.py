"""Master problem: choose a plan minimising the worst expected cost over a finite
collection of cost evaluators.

The expected rollover cost depends on a plan only through the number of jobs
crossing each day boundary, ``u_t = sum of y[t1, t2] with t2 <= t < t1``
(day shift ``= u_t - u_{t-1} - spare_t``).  ``PlanLattice`` enumerates the
distinct feasible crossing vectors once, each represented by its
lexicographically smallest plan, so every evaluator is a vector over the
lattice and the min-max is exact.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .expectation import PMFCache, rollover_laws_batch
from .intake import IntakeSpace, joint_pmf_all
from .lp import LinearProgram, mip_solve
from .planning import Instance, Pair, PullForwardPlan, day_shifts, feasible_pairs, lindley

log = logging.getLogger(__name__)

TIE_TOL = 1e-9
MAX_CLASSES = 500_000
_CHUNK = 4096


class LatticeTooLarge(RuntimeError):
    pass


@dataclass
class PlanLattice:
    """Distinct feasible boundary-crossing vectors of an instance.

    Row ``k`` of ``reps`` is the lexicographically smallest plan (over
    ``pairs``, canonical order) realising crossing vector ``u[k]``; rows are
    sorted by that plan, so row 0 is the empty plan.
    """

    instance: Instance
    pairs: Tuple[Pair, ...]
    reps: np.ndarray
    u: np.ndarray
    shifts: np.ndarray = field(init=False)

    def __post_init__(self):
        L = self.instance.L
        full = np.zeros((len(self.u), L + 1), dtype=np.int64)
        full[:, 1:L] = self.u
        self.shifts = full[:, 1:] - full[:, :-1] - self.instance.spare[None, :]

    def __len__(self):
        return len(self.reps)

    def plan(self, k: int) -> PullForwardPlan:
        return PullForwardPlan.from_vector(self.pairs, self.reps[k])


def build_lattice(instance: Instance, max_classes: int = MAX_CLASSES) -> PlanLattice:
    """Dynamic programme over pair groups (one group per receiving day)."""
    L = instance.L
    pairs = feasible_pairs(instance).feasible_pairs
    D = instance.workstack
    cap_in = [max(int(s), 0) for s in instance.spare]
    groups = [[p for p in pairs if p[1] == t2] for t2 in range(1, L)]
    # state: (u prefix, remaining workstack of days >= t2 + 2) -> smallest y prefix
    states: Dict[tuple, tuple] = {((), tuple(D[1:])): ()}
    for t2 in range(1, L):
        group = groups[t2 - 1]
        nxt: Dict[tuple, tuple] = {}
        for (u_pre, rem), y_pre in states.items():
            # rem[k] is remaining workstack of day t2 + 1 + k
            for amounts in _group_assignments(group, t2, rem, cap_in[t2 - 1]):
                rem2 = list(rem)
                for (t1, _), v in zip(group, amounts):
                    rem2[t1 - t2 - 1] -= v
                # u_{t2}: jobs due after t2 already pulled to t2 or earlier
                u_t = sum(D[t2 + k] - rem2[k] for k in range(len(rem2)))
                key = (u_pre + (u_t,), tuple(rem2[1:]))
                cand = y_pre + tuple(amounts)
                old = nxt.get(key)
                if old is None or cand < old:
                    nxt[key] = cand
        states = nxt
        if len(states) > max_classes:
            raise LatticeTooLarge(f"plan lattice exceeds {max_classes} states")
    classes: Dict[tuple, tuple] = {}
    for (u_vec, _), y_vec in states.items():
        old = classes.get(u_vec)
        if old is None or y_vec < old:
            classes[u_vec] = y_vec
    items = sorted(classes.items(), key=lambda kv: kv[1])
    reps = np.array([y for _, y in items], dtype=np.int64).reshape(len(items), len(pairs))
    u = np.array([u for u, _ in items], dtype=np.int64).reshape(len(items), L - 1)
    return PlanLattice(instance, tuple(pairs), reps, u)


def _group_assignments(group, t2, rem, cap):
    if not group:
        yield ()
        return

    def rec(k, left):
        if k == len(group):
            yield ()
            return
        t1 = group[k][0]
        for v in range(min(left, rem[t1 - t2 - 1]) + 1):
            for tail in rec(k + 1, left - v):
                yield (v,) + tail

    yield from rec(0, cap)


def lattice_index(lattice: PlanLattice, plan: PullForwardPlan) -> int:
    """Row of the lattice whose crossing vector matches ``plan``."""
    shifts = day_shifts(lattice.instance, plan)
    hit = np.flatnonzero(np.all(lattice.shifts == shifts[None, :], axis=1))
    if hit.size == 0:
        raise ValueError(f"plan {plan} is not feasible for this instance")
    return int(hit[0])


class CostEvaluator(ABC):
    """Expected rollover cost of plans under one fixed intake distribution."""

    label: str = ""

    def __init__(self, instance: Instance):
        self.instance = instance
        self.calls = 0
        self._tables: Dict[int, Tuple[PlanLattice, np.ndarray]] = {}

    def table(self, lattice: PlanLattice) -> np.ndarray:
        """Costs of every lattice class (memoised per lattice)."""
        hit = self._tables.get(id(lattice))
        if hit is None or hit[0] is not lattice:
            hit = (lattice, self.costs(lattice.shifts))
            self._tables[id(lattice)] = hit
        return hit[1]

    def cached_table(self, lattice: PlanLattice) -> Optional[np.ndarray]:
        hit = self._tables.get(id(lattice))
        return hit[1] if hit is not None and hit[0] is lattice else None

    def costs(self, shifts: np.ndarray) -> np.ndarray:
        shifts = np.atleast_2d(shifts)
        self.calls += len(shifts)
        out = np.empty(len(shifts))
        for s in range(0, len(shifts), _CHUNK):
            out[s:s + _CHUNK] = self._costs(shifts[s:s + _CHUNK])
        return out

    def __call__(self, plan: PullForwardPlan) -> float:
        return float(self.costs(day_shifts(self.instance, plan)[None, :])[0])

    @abstractmethod
    def _costs(self, shifts: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def support(self) -> Tuple[np.ndarray, np.ndarray]:
        """Scenario intakes ``(S, L)`` and weights ``(S,)`` defining the expectation."""


class BinomialEvaluator(CostEvaluator):
    """Exact expectation under independent binomial intakes (convolution engine)."""

    def __init__(self, instance: Instance, p, cache: Optional[PMFCache] = None):
        super().__init__(instance)
        self.p = tuple(float(v) for v in p)
        self.cache = cache if cache is not None else PMFCache(instance.i_max)
        self.label = "(" + ", ".join(f"{v:g}" for v in self.p) + ")"

    def _costs(self, shifts):
        return rollover_laws_batch(shifts, self.cache.marginals(self.p)) @ self.instance.a

    def support(self):
        space = IntakeSpace(self.instance.i_max)
        return space.all_intakes(), joint_pmf_all(self.p, space)


class ScenarioEvaluator(CostEvaluator):
    """Weighted sum of deterministic scenario costs (weights need not sum to one)."""

    def __init__(self, instance: Instance, intakes: np.ndarray, weights: np.ndarray, label: str = ""):
        super().__init__(instance)
        intakes = np.asarray(intakes, dtype=np.int64)
        weights = np.asarray(weights, dtype=float)
        keep = weights != 0.0
        self.intakes = intakes[keep]
        self.weights = weights[keep]
        self.label = label

    def _costs(self, shifts):
        S = len(self.intakes)
        if S == 0:
            return np.zeros(len(shifts))
        step = max(1, 2_000_000 // (S * self.instance.L))
        out = np.empty(len(shifts))
        for s in range(0, len(shifts), step):
            R = lindley(self.intakes[None, :, :], shifts[s:s + step, None, :])
            out[s:s + step] = (R @ self.instance.a) @ self.weights
        return out

    def support(self):
        return self.intakes, self.weights


@dataclass
class MasterSolution:
    plan: PullForwardPlan
    objective: float
    active_index: int
    values: np.ndarray  # every evaluator's cost at ``plan``
    strategy: str = "exact"
    activated: Tuple[int, ...] = ()


def _argmax_first(values: np.ndarray, tol: float = TIE_TOL) -> int:
    return int(np.flatnonzero(values >= values.max() - tol)[0])


def solve_min_max(instance: Instance, evaluators: Sequence[CostEvaluator], strategy: str = "exact",
                  lattice: Optional[PlanLattice] = None, tol: float = TIE_TOL) -> MasterSolution:
    """Plan minimising ``max_d f_d(y)``; ties go to the lexicographically smallest plan.

    ``strategy="exact"`` searches the plan lattice with lazy activation of
    evaluators: the active set starts from the evaluator worst at the empty
    plan, the min-max over the active set is solved exactly, and the worst
    evaluator at the candidate is added until none exceeds the active maximum.
    ``strategy="mip"`` assembles the extensive-form MIP and calls ``mip_solve``.
    """
    if not evaluators:
        raise ValueError("solve_min_max needs at least one evaluator")
    if strategy == "mip":
        return _solve_mip(instance, evaluators)
    if strategy != "exact":
        raise ValueError(f"unknown strategy {strategy!r}")
    lat = lattice if lattice is not None else build_lattice(instance)
    n = len(evaluators)
    point: Dict[Tuple[int, int], float] = {}

    def at(d, k):
        tab = evaluators[d].cached_table(lat)
        if tab is not None:
            return float(tab[k])
        key = (d, k)
        if key not in point:
            point[key] = float(evaluators[d].costs(lat.shifts[k:k + 1])[0])
        return point[key]

    start = np.array([at(d, 0) for d in range(n)])
    active = [_argmax_first(start, tol)]
    while True:
        M = np.max(np.vstack([evaluators[d].table(lat) for d in active]), axis=0)
        best = int(np.flatnonzero(M <= M.min() + tol)[0])
        vals = np.array([at(d, best) for d in range(n)])
        worst = _argmax_first(vals, tol)
        if vals[worst] <= M[best] + tol or worst in active:
            break
        active.append(worst)
    return MasterSolution(lat.plan(best), float(vals.max()), _argmax_first(vals, tol), vals, "exact",
                          tuple(active))


def build_mip(instance: Instance, evaluators: Sequence[CostEvaluator]):
    """Extensive-form MIP: min t over integer y, rollover per scenario, one t-row per evaluator.

    Returns ``(lp, pairs, t_index)``; y variables occupy indices ``0..len(pairs)-1``.
    """
    L = instance.L
    pairs = feasible_pairs(instance).feasible_pairs
    lp = LinearProgram()
    for (t1, t2) in pairs:
        lp.add_var(0.0, 0, min(instance.workstack[t1 - 1], max(int(instance.spare[t2 - 1]), 0)),
                   integer=True, name=f"y[{t1},{t2}]")
    t_idx = lp.add_var(1.0, 0.0, np.inf, name="t")
    # union of scenario supports, deduplicated
    supports = [e.support() for e in evaluators]
    all_int = np.unique(np.vstack([s[0] for s in supports]), axis=0)
    keys = {tuple(r): j for j, r in enumerate(all_int)}
    R0 = lp.n_vars
    for j in range(len(all_int)):
        for t in range(L):
            lp.add_var(0.0, 0.0, np.inf, name=f"R[{j},{t + 1}]")
    for j, i in enumerate(all_int):
        for t in range(L):
            row = {R0 + j * L + t: 1.0}
            if t > 0:
                row[R0 + j * L + t - 1] = -1.0
            for k, (t1, t2) in enumerate(pairs):
                coef = (t2 - 1 == t) - (t1 - 1 == t)
                if coef:
                    row[k] = row.get(k, 0.0) - coef
            lp.add_row(row, ">=", float(i[t] - instance.spare[t]))
    a = instance.a
    for intakes, weights in supports:
        row = {t_idx: 1.0}
        for i, w in zip(intakes, weights):
            j = keys[tuple(i)]
            for t in range(L):
                row[R0 + j * L + t] = row.get(R0 + j * L + t, 0.0) - w * a[t]
        lp.add_row(row, ">=", 0.0)
    return lp, pairs, t_idx


def _solve_mip(instance, evaluators):
    lp, pairs, _ = build_mip(instance, evaluators)
    res = mip_solve(lp)
    if res.status != "optimal":
        raise RuntimeError(f"master MIP ended with status {res.status}")
    plan = PullForwardPlan.from_vector(pairs, np.round(res.x[:len(pairs)]).astype(int))
    shifts = day_shifts(instance, plan)[None, :]
    vals = np.array([float(e.costs(shifts)[0]) for e in evaluators])
    return MasterSolution(plan, float(vals.max()), _argmax_first(vals), vals, "mip")
