"""Deterministic planning model: instances, pull-forward plans and rollover.

Days are 1-indexed in the public API (pairs ``(t1, t2)`` mean "a job due on
day ``t1`` is completed on day ``t2``"); arrays are 0-indexed internally.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

Pair = Tuple[int, int]


class PlanStructureError(ValueError):
    """Plan refers to a pair outside the instance's pair set."""


class IntakeDomainError(ValueError):
    """Intake realisation outside ``[0, i_max]``."""


@dataclass(frozen=True)
class Instance:
    """A tactical planning problem over ``L`` days with pull-forward window ``K``."""

    L: int
    K: int
    capacity: Tuple[int, ...]
    workstack: Tuple[int, ...]
    rollover_cost: Tuple[float, ...]
    i_max: Tuple[int, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "capacity", tuple(int(v) for v in self.capacity))
        object.__setattr__(self, "workstack", tuple(int(v) for v in self.workstack))
        object.__setattr__(self, "rollover_cost", tuple(float(v) for v in self.rollover_cost))
        object.__setattr__(self, "i_max", tuple(int(v) for v in self.i_max))
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"horizon L must be an integer >= 2, got {self.L}")
        if int(self.K) != self.K or not 1 <= self.K <= self.L - 1:
            raise ValueError(f"window K must satisfy 1 <= K <= L-1, got K={self.K}, L={self.L}")
        for label in ("capacity", "workstack", "rollover_cost", "i_max"):
            vec = getattr(self, label)
            if len(vec) != self.L:
                raise ValueError(f"{label} has length {len(vec)}, expected {self.L}")
            arr = np.asarray(vec, dtype=float)
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{label} entries must be finite and non-negative")

    @property
    def spare(self) -> np.ndarray:
        """Signed spare capacity ``c - D`` per day."""
        return np.asarray(self.capacity, dtype=np.int64) - np.asarray(self.workstack, dtype=np.int64)

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.rollover_cost, dtype=float)

    @property
    def imax(self) -> np.ndarray:
        return np.asarray(self.i_max, dtype=np.int64)


def all_pairs(L: int, K: int) -> List[Pair]:
    """Pairs ``(t1, t2)`` in canonical order: ``t2`` ascending, then ``t1`` ascending."""
    pairs = [(t1, t2) for t2 in range(1, L) for t1 in range(t2 + 1, min(t2 + K, L) + 1)]
    return pairs


@dataclass(frozen=True)
class PairSets:
    all_pairs: Tuple[Pair, ...]
    feasible_pairs: Tuple[Pair, ...]


def feasible_pairs(instance: Instance) -> PairSets:
    """All pull-forward pairs and the subset that can carry a positive amount."""
    F = all_pairs(instance.L, instance.K)
    c, D = instance.capacity, instance.workstack
    Fp = [(t1, t2) for (t1, t2) in F if c[t2 - 1] > D[t2 - 1] and D[t1 - 1] > 0]
    return PairSets(tuple(F), tuple(Fp))


@dataclass(frozen=True)
class PullForwardPlan:
    """Integer pull-forward amounts keyed by pair; missing pairs are zero."""

    y: Mapping[Pair, int] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for pair, v in dict(self.y).items():
            pair = (int(pair[0]), int(pair[1]))
            if int(v) != v or v < 0:
                raise ValueError(f"pull-forward amount for {pair} must be a non-negative integer, got {v}")
            if v:
                clean[pair] = int(v)
        object.__setattr__(self, "y", clean)

    def __getitem__(self, pair: Pair) -> int:
        return self.y.get(pair, 0)

    @classmethod
    def zeros(cls) -> "PullForwardPlan":
        return cls({})

    @classmethod
    def from_vector(cls, pairs: Sequence[Pair], values: Iterable[int]) -> "PullForwardPlan":
        return cls({p: int(v) for p, v in zip(pairs, values)})

    def vector(self, pairs: Sequence[Pair]) -> np.ndarray:
        return np.array([self[p] for p in pairs], dtype=np.int64)

    def total(self) -> int:
        return sum(self.y.values())

    def as_list(self) -> List[List[int]]:
        """``[[t1, t2, amount], ...]`` for serialisation, canonical order."""
        return [[t1, t2, v] for (t1, t2), v in sorted(self.y.items(), key=lambda kv: (kv[0][1], kv[0][0]))]

    def __str__(self):
        if not self.y:
            return "0"
        return ";".join(f"{t1}>{t2}:{v}" for t1, t2, v in self.as_list())


@dataclass(frozen=True)
class RolloverTrajectory:
    R: Tuple[float, ...]
    total_cost: float


@dataclass(frozen=True)
class Violation:
    kind: str  # "workstack" (jobs moved out of t1) or "spare" (jobs moved into t2)
    day: int
    amount: int
    limit: int


def _check_structure(instance: Instance, plan: PullForwardPlan) -> None:
    F = set(all_pairs(instance.L, instance.K))
    bad = sorted(p for p in plan.y if p not in F)
    if bad:
        raise PlanStructureError(f"pairs {bad} are outside the pull-forward window (L={instance.L}, K={instance.K})")


def pulls_into(instance: Instance, plan: PullForwardPlan) -> np.ndarray:
    """Jobs completed early on each day (index ``t2 - 1``)."""
    out = np.zeros(instance.L, dtype=np.int64)
    for (t1, t2), v in plan.y.items():
        out[t2 - 1] += v
    return out


def pulls_out_of(instance: Instance, plan: PullForwardPlan) -> np.ndarray:
    """Jobs due on each day that are completed earlier (index ``t1 - 1``)."""
    out = np.zeros(instance.L, dtype=np.int64)
    for (t1, t2), v in plan.y.items():
        out[t1 - 1] += v
    return out


def validate_plan(instance: Instance, plan: PullForwardPlan) -> List[Violation]:
    """Return the list of violated bound constraints; empty means feasible.

    Raises PlanStructureError when the plan uses a pair outside the window.
    """
    _check_structure(instance, plan)
    violations = []
    out = pulls_out_of(instance, plan)
    into = pulls_into(instance, plan)
    for t in range(instance.L):
        if out[t] > instance.workstack[t]:
            violations.append(Violation("workstack", t + 1, int(out[t]), instance.workstack[t]))
    for t in range(instance.L):
        limit = max(instance.capacity[t] - instance.workstack[t], 0)
        if into[t] > limit:
            violations.append(Violation("spare", t + 1, int(into[t]), limit))
    return violations


def is_feasible(instance: Instance, plan: PullForwardPlan) -> bool:
    return not validate_plan(instance, plan)


def day_shifts(instance: Instance, plan: PullForwardPlan) -> np.ndarray:
    """Net deterministic inflow per day: ``pulls_into - pulls_out_of - (c - D)``.

    With these shifts the rollover obeys ``R_t = max(0, R_{t-1} + i_t + shift_t)``.
    """
    return pulls_into(instance, plan) - pulls_out_of(instance, plan) - instance.spare


def lindley(intakes: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Vectorised rollover recursion.

    ``intakes`` has shape ``(..., L)`` and ``shifts`` broadcasts against it.
    Returns rollover of the same shape.
    """
    intakes = np.asarray(intakes)
    shifts = np.asarray(shifts)
    shape = np.broadcast_shapes(intakes.shape, shifts.shape)
    inflow = np.broadcast_to(intakes, shape) + np.broadcast_to(shifts, shape)
    R = np.empty(shape, dtype=np.result_type(inflow.dtype, np.float64))
    prev = np.zeros(shape[:-1])
    for t in range(shape[-1]):
        prev = np.maximum(0.0, prev + inflow[..., t])
        R[..., t] = prev
    return R


def rollover_trajectory(instance: Instance, plan: PullForwardPlan, intake: Sequence[int]) -> RolloverTrajectory:
    """Minimal rollover satisfying the recursion constraints for one intake."""
    i = np.asarray(intake)
    if i.shape != (instance.L,):
        raise ValueError(f"intake must have length {instance.L}")
    if np.any(i < 0) or np.any(i > instance.imax):
        raise IntakeDomainError(f"intake {tuple(i)} outside [0, {instance.i_max}]")
    R = lindley(i, day_shifts(instance, plan))
    return RolloverTrajectory(tuple(float(r) for r in R), float(instance.a @ R))
