"""Binomial intake machinery and parametric ambiguity sets."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

DEFAULT_BETA = 1e-3
MAX_SPACE = 2**62


class IntakeSpace:
    """All intake vectors ``0 <= i <= i_max``, indexed lexicographically (day 1 most significant)."""

    def __init__(self, i_max: Sequence[int]):
        self.i_max = tuple(int(v) for v in i_max)
        if any(v < 0 for v in self.i_max):
            raise ValueError("i_max entries must be non-negative")
        self.shape = tuple(v + 1 for v in self.i_max)
        self.cardinality = space_cardinality(self.i_max)

    def __len__(self):
        return self.cardinality

    def vector(self, index: int) -> Tuple[int, ...]:
        if not 0 <= index < self.cardinality:
            raise IndexError(index)
        return tuple(int(v) for v in np.unravel_index(index, self.shape))

    def index(self, intake: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(v) for v in intake), self.shape))

    def all_intakes(self) -> np.ndarray:
        """Array of shape ``(|I|, L)`` in index order."""
        grids = np.indices(self.shape).reshape(len(self.shape), -1)
        return grids.T.astype(np.int64)


def space_cardinality(i_max: Sequence[int]) -> int:
    n = 1
    for v in i_max:
        if v < 0:
            raise ValueError("i_max entries must be non-negative")
        n *= int(v) + 1
        if n > MAX_SPACE:
            raise OverflowError(f"intake space for i_max={tuple(i_max)} is too large")
    return n


def binomial_pmf_table(n: int, p: float) -> np.ndarray:
    """PMF of Bin(n, p) on ``0..n`` via the ratio recurrence.

    Starts from ``(1-p)^n`` and multiplies by ``(n-k)/(k+1) * p/(1-p)``;
    the degenerate cases ``p in {0, 1}`` are exact point masses.
    """
    if n < 0 or int(n) != n:
        raise ValueError(f"number of trials must be a non-negative integer, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"success probability must lie in [0, 1], got {p}")
    n = int(n)
    out = np.zeros(n + 1)
    if p == 0.0:
        out[0] = 1.0
        return out
    if p == 1.0:
        out[n] = 1.0
        return out
    ratio = p / (1.0 - p)
    out[0] = (1.0 - p) ** n
    if out[0] == 0.0:
        # underflow of (1-p)^n for large n: anchor at the mode in log space
        mode = int(math.floor((n + 1) * p))
        mode = min(mode, n)
        logpm = (math.lgamma(n + 1) - math.lgamma(mode + 1) - math.lgamma(n - mode + 1)
                 + mode * math.log(p) + (n - mode) * math.log1p(-p))
        out[mode] = math.exp(logpm)
        for k in range(mode, n):
            out[k + 1] = out[k] * (n - k) / (k + 1) * ratio
        for k in range(mode, 0, -1):
            out[k - 1] = out[k] * k / (n - k + 1) / ratio
        return out
    for k in range(n):
        out[k + 1] = out[k] * (n - k) / (k + 1) * ratio
    return out


def binomial_pmf(n: int, p: float, k: int) -> float:
    if not 0 <= k <= n:
        raise ValueError(f"count k={k} outside [0, {n}]")
    return float(binomial_pmf_table(n, p)[k])


def joint_pmf(p: Sequence[float], i_max: Sequence[int], intake: Sequence[int]) -> float:
    """Probability of one intake vector under independent binomial days."""
    if not len(p) == len(i_max) == len(intake):
        raise ValueError("p, i_max and intake must have the same length")
    prob = 1.0
    for pt, n, k in zip(p, i_max, intake):
        prob *= binomial_pmf(n, pt, k)
    return prob


def joint_pmf_all(p: Sequence[float], space: IntakeSpace) -> np.ndarray:
    """Joint PMF over the whole intake space, in index order."""
    joint = np.ones(1)
    for pt, n in zip(p, space.i_max):
        joint = np.multiply.outer(joint, binomial_pmf_table(n, pt)).ravel()
    return joint


def mle_success_probs(samples, i_max: Sequence[int]) -> np.ndarray:
    """Maximum-likelihood success probabilities from ``N`` intake samples."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    i_max = np.asarray(i_max, dtype=float)
    if samples.size == 0 or samples.shape[0] == 0:
        raise ValueError("at least one intake sample is required")
    if samples.shape[1] != i_max.size:
        raise ValueError("samples must have one column per day")
    if np.any(samples < 0) or np.any(samples > i_max):
        raise ValueError("samples must lie within [0, i_max]")
    N = samples.shape[0]
    totals = samples.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        p_hat = np.where(i_max > 0, totals / (N * np.where(i_max > 0, i_max, 1)), 0.0)
    return p_hat


def clamp_p_hat(p_hat: Sequence[float], N: int, i_max: Sequence[int]) -> np.ndarray:
    """Pull boundary MLEs into the interior so the confidence statistic is defined."""
    p_hat = np.asarray(p_hat, dtype=float)
    eps = 1.0 / (2.0 * N * np.maximum(np.asarray(i_max, dtype=float), 1.0))
    return np.clip(p_hat, eps, 1.0 - eps)


def chi_square_quantile(k: int, q: float) -> float:
    """``q``-quantile of the chi-square distribution with ``k`` degrees of freedom."""
    if k < 1 or int(k) != k:
        raise ValueError(f"degrees of freedom must be a positive integer, got {k}")
    if not 0.0 < q < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {q}")
    return float(stats.chi2.ppf(q, int(k)))


@dataclass
class ParametricAmbiguitySet:
    """Finite set of success-probability vectors, lexicographically ordered.

    ``kind`` records provenance: "grid", "confidence", "extreme" or "explicit".
    A grid set is lazy: iteration yields points without storing them.
    """

    L: int
    kind: str = "explicit"
    n_probs: Optional[int] = None
    N: Optional[int] = None
    alpha: Optional[float] = None
    p_hat: Optional[Tuple[float, ...]] = None
    _members: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_members(cls, members, **meta) -> "ParametricAmbiguitySet":
        arr = np.atleast_2d(np.asarray(members, dtype=float))
        if arr.size == 0:
            raise ValueError("ambiguity set must be non-empty")
        if np.any(arr < 0) or np.any(arr > 1):
            raise ValueError("success probabilities must lie in [0, 1]")
        arr = _lex_unique(arr)
        meta.setdefault("L", arr.shape[1])
        return cls(_members=arr, **meta)

    @property
    def is_lazy(self) -> bool:
        return self._members is None

    @property
    def members(self) -> np.ndarray:
        if self._members is None:
            grid = np.arange(self.n_probs + 1) / self.n_probs
            self._members = np.array(list(itertools.product(grid, repeat=self.L)), dtype=float)
        return self._members

    def __len__(self):
        if self._members is None:
            return (self.n_probs + 1) ** self.L
        return self._members.shape[0]

    def __iter__(self) -> Iterator[Tuple[float, ...]]:
        if self._members is None:
            grid = [j / self.n_probs for j in range(self.n_probs + 1)]
            return iter(itertools.product(grid, repeat=self.L))
        return (tuple(float(v) for v in row) for row in self._members)

    def __contains__(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        if self._members is None:
            scaled = p * self.n_probs
            return bool(np.all(np.abs(scaled - np.round(scaled)) < 1e-9) and np.all((p >= 0) & (p <= 1)))
        return bool(np.any(np.all(np.abs(self._members - p) < 1e-12, axis=1)))

    def index_of(self, p) -> int:
        hits = np.flatnonzero(np.all(np.abs(self.members - np.asarray(p, dtype=float)) < 1e-12, axis=1))
        if hits.size == 0:
            raise KeyError(tuple(p))
        return int(hits[0])

    def tuples(self):
        return [tuple(float(v) for v in row) for row in self.members]


def _lex_unique(arr: np.ndarray) -> np.ndarray:
    arr = np.unique(arr, axis=0)  # np.unique on rows sorts lexicographically
    return arr


def build_base_grid(n_probs: int, L: int) -> ParametricAmbiguitySet:
    if n_probs < 1:
        raise ValueError("n_probs must be >= 1")
    return ParametricAmbiguitySet(L=L, kind="grid", n_probs=int(n_probs))


def confidence_statistic(p, p_hat, N: int, i_max) -> np.ndarray:
    """Weighted squared distance of ``p`` (rows) from ``p_hat``; chi-square_L under the null."""
    p = np.asarray(p, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    w = N * np.asarray(i_max, dtype=float) / (p_hat * (1.0 - p_hat))
    return ((p_hat - p) ** 2 * w).sum(axis=-1)


def build_confidence_set(p_hat, N: int, i_max, alpha: float, n_probs: int) -> ParametricAmbiguitySet:
    """Grid points inside the approximate ``100(1-alpha)%`` confidence ellipsoid around ``p_hat``.

    If no grid point qualifies (large ``N``) the grid points closest to
    ``p_hat`` in the same weighted metric are returned instead.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    i_max = np.asarray(i_max, dtype=float)
    L = p_hat.size
    if i_max.size != L:
        raise ValueError("p_hat and i_max must have the same length")
    if np.any(p_hat <= 0) or np.any(p_hat >= 1):
        raise ValueError("p_hat must lie strictly inside (0, 1); clamp boundary MLEs with clamp_p_hat first")
    if N < 1:
        raise ValueError("N must be >= 1")
    threshold = chi_square_quantile(L, 1.0 - alpha)
    weights = N * i_max / (p_hat * (1.0 - p_hat))
    grid = np.arange(n_probs + 1) / n_probs
    terms = [(p_hat[t] - grid) ** 2 * weights[t] for t in range(L)]
    # per-coordinate pruning: keep grid values whose own term already fits
    allowed = [np.flatnonzero(terms[t] <= threshold) for t in range(L)]
    members = []
    if all(a.size for a in allowed):
        min_rest = np.zeros(L + 1)
        for t in range(L - 1, -1, -1):
            min_rest[t] = min_rest[t + 1] + terms[t][allowed[t]].min()

        def walk(t, acc, prefix):
            if t == L:
                members.append(prefix)
                return
            for j in allowed[t]:
                s = acc + terms[t][j]
                if s + min_rest[t + 1] <= threshold:
                    walk(t + 1, s, prefix + (grid[j],))

        walk(0, 0.0, ())
    meta = dict(L=L, kind="confidence", n_probs=n_probs, N=N, alpha=alpha, p_hat=tuple(float(v) for v in p_hat))
    if not members:
        members = _nearest_grid_points(p_hat, weights, grid)
    return ParametricAmbiguitySet.from_members(members, **meta)


def _nearest_grid_points(p_hat, weights, grid):
    options = []
    for t in range(p_hat.size):
        d = (p_hat[t] - grid) ** 2 * weights[t]
        best = d.min()
        options.append(grid[np.flatnonzero(np.isclose(d, best, rtol=1e-12, atol=0.0))])
    return list(itertools.product(*options))


def build_extreme_set(theta: ParametricAmbiguitySet) -> ParametricAmbiguitySet:
    """Members that maximise one coordinate and, among those, the coordinate sum."""
    P = theta.members
    if P.shape[0] == 0:
        raise ValueError("ambiguity set must be non-empty")
    chosen = []
    for t in range(P.shape[1]):
        col = P[:, t]
        top = P[np.abs(col - col.max()) <= 1e-12]
        sums = top.sum(axis=1)
        chosen.append(top[np.abs(sums - sums.max()) <= 1e-12])
    meta = dict(L=theta.L, kind="extreme", n_probs=theta.n_probs, N=theta.N, alpha=theta.alpha, p_hat=theta.p_hat)
    return ParametricAmbiguitySet.from_members(np.vstack(chosen), **meta)


@dataclass(frozen=True)
class ReducedIntakeSet:
    beta: float
    i_max: Tuple[int, ...]
    indices: np.ndarray
    max_prob: np.ndarray  # max over the ambiguity set, for retained intakes

    def __len__(self):
        return int(self.indices.size)

    def intakes(self) -> np.ndarray:
        return IntakeSpace(self.i_max).all_intakes()[self.indices]


def max_joint_pmf(theta: ParametricAmbiguitySet, space: IntakeSpace, chunk: int = 64) -> np.ndarray:
    """``max_{p in theta} P^p(i)`` for every intake ``i`` (exact, all members)."""
    best = np.zeros(space.cardinality)
    tables: Dict[Tuple[int, float], np.ndarray] = {}

    def marginal(n, p):
        key = (n, float(p))
        if key not in tables:
            tables[key] = binomial_pmf_table(n, p)
        return tables[key]

    for p in theta:
        joint = np.ones(1)
        for pt, n in zip(p, space.i_max):
            joint = np.multiply.outer(joint, marginal(n, pt)).ravel()
        np.maximum(best, joint, out=best)
    return best


def reduce_intake_set(theta: ParametricAmbiguitySet, i_max, beta: float = DEFAULT_BETA) -> ReducedIntakeSet:
    """Keep intakes whose largest probability over ``theta`` exceeds ``beta``."""
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    space = IntakeSpace(i_max)
    best = max_joint_pmf(theta, space)
    keep = np.flatnonzero(best > beta)
    if keep.size == 0:
        raise ValueError(f"no intake has probability above beta={beta}; lower beta")
    return ReducedIntakeSet(beta=beta, i_max=space.i_max, indices=keep, max_prob=best[keep])
