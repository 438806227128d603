"""Exact expected rollover cost under independent binomial intakes.

Two routes compute the same quantity:

* ``expected_cost_enumeration`` sums the cost of every intake vector weighted
  by its joint probability (the reference).
* ``expected_cost_convolution`` propagates the law of ``R_t`` day by day.
  Because ``R_t = max(0, R_{t-1} + I_t + shift_t)`` and days are independent,
  the law of ``R_t`` is the law of ``R_{t-1}`` convolved with the binomial law
  of ``I_t``, shifted, with negative mass collapsed onto zero.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .intake import IntakeSpace, ReducedIntakeSet, binomial_pmf_table, joint_pmf_all
from .planning import Instance, PullForwardPlan, day_shifts, lindley

log = logging.getLogger(__name__)

ENUMERATION_CAP = 10**6
_FLUSH = 1e-300


class PMFCache:
    """Per-solve cache of binomial marginal tables, keyed by the success-probability vector.

    ``constructions`` counts distinct vectors whose tables were built; this is
    the counter the solvers report as "PMF tables".
    """

    def __init__(self, i_max: Sequence[int]):
        self.i_max = tuple(int(v) for v in i_max)
        self._sets: Dict[Tuple[float, ...], List[np.ndarray]] = {}
        self._days: Dict[Tuple[int, float], np.ndarray] = {}
        self.constructions = 0

    def marginals(self, p) -> List[np.ndarray]:
        key = tuple(float(v) for v in p)
        tables = self._sets.get(key)
        if tables is None:
            self.constructions += 1
            tables = []
            for n, pt in zip(self.i_max, key):
                day_key = (n, pt)
                if day_key not in self._days:
                    self._days[day_key] = binomial_pmf_table(n, pt)
                tables.append(self._days[day_key])
            self._sets[key] = tables
        return tables

    def __contains__(self, p) -> bool:
        return tuple(float(v) for v in p) in self._sets


@dataclass(frozen=True)
class RolloverDistribution:
    """Per-day law of the rollover on ``0..UB_t``."""

    laws: Tuple[np.ndarray, ...]

    def expectations(self) -> np.ndarray:
        return np.array([law @ np.arange(law.size) for law in self.laws])


def support_bounds(shifts: np.ndarray, i_max: Sequence[int]) -> np.ndarray:
    """Rollover at ``i = i_max``: the largest value each ``R_t`` can take."""
    return lindley(np.asarray(i_max), shifts)


def rollover_laws_batch(shifts: np.ndarray, marginals: Sequence[np.ndarray], keep_laws: bool = False):
    """Propagate rollover laws for many plans at once.

    ``shifts`` has shape ``(P, L)`` (integer); returns ``E[R_t]`` with shape
    ``(P, L)`` and, optionally, the list of per-day law arrays ``(P, W+1)``.
    """
    shifts = np.atleast_2d(np.asarray(shifts, dtype=np.int64))
    P, L = shifts.shape
    i_max = [m.size - 1 for m in marginals]
    W = int(support_bounds(shifts, i_max).max()) if P else 0
    dist = np.zeros((P, W + 1))
    dist[:, 0] = 1.0
    values = np.arange(W + 1, dtype=float)
    means = np.empty((P, L))
    laws = []
    rows = np.arange(P)[:, None]
    for t in range(L):
        pmf = marginals[t]
        width = W + pmf.size
        X = np.zeros((P, width))
        for k, w in enumerate(pmf):
            if w != 0.0:
                X[:, k:k + W + 1] += w * dist
        # R = max(0, X + s): value v >= 1 comes from X = v - s, zero collects X <= -s
        s = shifts[:, t][:, None]
        cdf = np.cumsum(X, axis=1)
        idx0 = -s[:, 0]
        atom = np.where(idx0 < 0, 0.0, cdf[np.arange(P), np.clip(idx0, 0, width - 1)])
        src = np.arange(1, W + 1)[None, :] - s
        valid = (src >= 0) & (src < width)
        new = np.zeros((P, W + 1))
        new[:, 1:] = np.where(valid, X[rows, np.clip(src, 0, width - 1)], 0.0)
        new[:, 0] = atom
        new[new < _FLUSH] = 0.0
        drift = np.abs(new.sum(axis=1) - 1.0)
        if np.any(drift > 1e-12):
            log.debug("renormalising rollover law on day %d (max drift %.3g)", t + 1, drift.max())
            new /= new.sum(axis=1, keepdims=True)
        dist = new
        means[:, t] = dist @ values
        if keep_laws:
            laws.append(dist.copy())
    return (means, laws) if keep_laws else means


def expected_cost_convolution(instance: Instance, plan: PullForwardPlan, p, cache: Optional[PMFCache] = None,
                              profile: bool = False):
    """Expected rollover cost via day-by-day convolution of rollover laws.

    With ``profile=True`` also returns the per-day expected rollover.
    """
    marginals = (cache or PMFCache(instance.i_max)).marginals(p)
    means = rollover_laws_batch(day_shifts(instance, plan)[None, :], marginals)[0]
    cost = float(instance.a @ means)
    return (cost, means) if profile else cost


def rollover_distribution(instance: Instance, plan: PullForwardPlan, p) -> RolloverDistribution:
    marginals = PMFCache(instance.i_max).marginals(p)
    shifts = day_shifts(instance, plan)
    ub = support_bounds(shifts, instance.i_max).astype(int)
    _, laws = rollover_laws_batch(shifts[None, :], marginals, keep_laws=True)
    return RolloverDistribution(tuple(law[0, :ub[t] + 1].copy() for t, law in enumerate(laws)))


def scenario_costs(instance: Instance, intakes: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Deterministic rollover cost of each intake row under the given day shifts."""
    return lindley(intakes, shifts) @ instance.a


def expected_cost_enumeration(instance: Instance, plan: PullForwardPlan, p, space: Optional[IntakeSpace] = None,
                              cap: int = ENUMERATION_CAP) -> float:
    """Expected cost by summing over every intake vector (reference route)."""
    space = space or IntakeSpace(instance.i_max)
    if space.cardinality > cap:
        raise ValueError(f"|I| = {space.cardinality} exceeds the enumeration cap {cap}; "
                         "use expected_cost_convolution")
    intakes = space.all_intakes()
    weights = joint_pmf_all(p, space)
    costs = scenario_costs(instance, intakes, day_shifts(instance, plan))
    return float(np.sum(weights * costs))


def expected_cost_reduced(instance: Instance, plan: PullForwardPlan, p, reduced: ReducedIntakeSet) -> float:
    """Truncated expectation over the retained intakes; probabilities are not renormalised."""
    if tuple(reduced.i_max) != tuple(instance.i_max):
        raise ValueError("reduced intake set was built for a different i_max")
    space = IntakeSpace(instance.i_max)
    weights = joint_pmf_all(p, space)[reduced.indices]
    costs = scenario_costs(instance, reduced.intakes(), day_shifts(instance, plan))
    return float(np.sum(weights * costs))
