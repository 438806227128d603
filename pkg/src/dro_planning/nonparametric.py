"""Non-parametric DRO: a modified chi-square ball around the nominal joint law.

The inner problem ``max_P sum_j P_j c_j`` over the ball
``{P >= 0, sum P = 1, sum (P_j - Q_j)^2 / Q_j <= rho}`` has the closed-form
solution ``P_j = Q_j * max(1 + (c_j - nu) / (2 lam), 0)`` for multipliers
``lam > 0`` and ``nu`` fixed by normalisation and an active radius.  The outer
plan choice is solved by a cut loop over a growing pool of worst-case laws.
"""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .expectation import scenario_costs
from .intake import IntakeSpace, chi_square_quantile, joint_pmf_all
from .minmax import ScenarioEvaluator, build_lattice, solve_min_max
from .parametric import IterationRecord, SolveReport
from .planning import Instance, day_shifts

NP_MAX_SCENARIOS = 10**5
MOD_CHI2_SECOND_DERIVATIVE = 2.0


def compute_rho(N: int, k: int, alpha: float, phi_second_deriv_at_1: float = MOD_CHI2_SECOND_DERIVATIVE) -> float:
    """Radius ``phi''(1) / (2N) * chi2_{k, 1-alpha}`` of an approximate confidence ball."""
    if N < 1:
        raise ValueError("N must be at least 1")
    return phi_second_deriv_at_1 / (2.0 * N) * chi_square_quantile(k, 1.0 - alpha)


def mod_chi2_divergence(P, Q) -> float:
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise ValueError("P and Q must share a support")
    if np.any((Q <= 0) & (P > 0)):
        raise ValueError("P puts mass where Q has none")
    pos = Q > 0
    return float(np.sum((P[pos] - Q[pos]) ** 2 / Q[pos]))


def conjugate_mod_chi2(s):
    """Convex conjugate of ``phi(t) = (t - 1)^2`` restricted to ``t >= 0``."""
    s = np.asarray(s, dtype=float)
    out = np.maximum(s / 2.0 + 1.0, 0.0) ** 2 - 1.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class NonparametricAmbiguity:
    Q: np.ndarray
    rho: float
    space: Optional[IntakeSpace] = None
    divergence: str = "modified_chi2"

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if np.any(Q < 0) or abs(Q.sum() - 1.0) > 1e-10:
            raise ValueError("Q must be a probability vector")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        object.__setattr__(self, "Q", Q)

    @classmethod
    def from_p_hat(cls, i_max, p_hat, N: int, alpha: float, k: Optional[int] = None):
        """Nominal binomial law at ``p_hat``; ``k`` defaults to the number of days."""
        space = IntakeSpace(i_max)
        if space.cardinality > NP_MAX_SCENARIOS:
            raise ValueError(f"|I| = {space.cardinality} exceeds {NP_MAX_SCENARIOS}; too large for NP")
        k = len(space.i_max) if k is None else k
        return cls(joint_pmf_all(p_hat, space), compute_rho(N, k, alpha), space)


@dataclass
class InnerSolution:
    P: np.ndarray
    lam: float
    nu: float
    objective: float  # primal value sum P c
    dual_objective: float
    divergence: float

    def s(self, costs) -> np.ndarray:
        """Scaled dual slacks ``(c_j - nu) / lam``."""
        return (np.asarray(costs, dtype=float) - self.nu) / self.lam


def _nu_given_lambda(c_sorted, Q_sorted, cumQ, cumQc, lam):
    """Exact normalisation root: the active set is a prefix of the costs in descending order."""
    two_lam = 2.0 * lam
    n = len(c_sorted)
    for m in range(1, n + 1):
        nu = (cumQc[m - 1] + two_lam * cumQ[m - 1] - two_lam) / cumQ[m - 1]
        lo = c_sorted[m] if m < n else -math.inf
        # active set {1..m} requires c_m > nu - 2 lam >= c_{m+1}
        if c_sorted[m - 1] > nu - two_lam and nu - two_lam >= lo:
            return nu
    return (cumQc[-1] + two_lam * cumQ[-1] - two_lam) / cumQ[-1]


def _weights(c, Q, lam, nu):
    return Q * np.maximum(1.0 + (c - nu) / (2.0 * lam), 0.0)


def np_worst_case_distribution(costs, ambiguity, rho: Optional[float] = None, tol: float = 1e-9) -> InnerSolution:
    """Worst-case law in the ball for fixed scenario costs.

    ``ambiguity`` is a ``NonparametricAmbiguity`` or a nominal vector ``Q``
    (then ``rho`` is required).  Scenarios with ``Q_j = 0`` keep zero mass.
    """
    if isinstance(ambiguity, NonparametricAmbiguity):
        Q, rho = ambiguity.Q, ambiguity.rho if rho is None else rho
    else:
        Q = np.asarray(ambiguity, dtype=float)
        if rho is None or not rho > 0:
            raise ValueError("rho must be positive")
    c = np.asarray(costs, dtype=float)
    if c.shape != Q.shape or not np.all(np.isfinite(c)):
        raise ValueError("costs must be finite and match the support of Q")
    support = Q > 0
    cs, Qs = c[support], Q[support]
    P = np.zeros_like(Q)
    c_max, c_min = cs.max(), cs.min()
    if c_max - c_min <= 1e-10:
        P[support] = Qs
        val = float(Qs @ cs)
        return InnerSolution(P, 0.0, c_max, val, c_max, 0.0)
    top = cs >= c_max - 1e-12
    q_top = Qs[top].sum()
    d_top = (1.0 - q_top) / q_top
    if rho >= d_top:
        # the ball reaches the conditional law on the argmax set: lam = 0, interior
        Ps = np.where(top, Qs / q_top, 0.0)
        P[support] = Ps
        return InnerSolution(P, 0.0, c_max, float(Ps @ cs), c_max, mod_chi2_divergence(Ps, Qs))
    order = np.argsort(-cs, kind="stable")
    c_sorted, Q_sorted = cs[order], Qs[order]
    cumQ, cumQc = np.cumsum(Q_sorted), np.cumsum(Q_sorted * c_sorted)

    def excess(lam):
        nu = _nu_given_lambda(c_sorted, Q_sorted, cumQ, cumQc, lam)
        w = _weights(cs, Qs, lam, nu)
        return float(np.sum((w - Qs) ** 2 / Qs)) - rho

    lam_hi = (c_max - c_min) * math.sqrt(np.sum(1.0 / Qs))
    while excess(lam_hi) > 0:
        lam_hi *= 2.0
    lam_lo = lam_hi
    while excess(lam_lo) <= 0:
        lam_lo /= 2.0
    lam = brentq(excess, lam_lo, lam_hi, xtol=1e-15 * lam_lo, rtol=4 * np.finfo(float).eps, maxiter=500)
    nu = _nu_given_lambda(c_sorted, Q_sorted, cumQ, cumQc, lam)
    Ps = _weights(cs, Qs, lam, nu)
    # remove the tiny normalisation residual left by floating point
    Ps = Ps / Ps.sum()
    P[support] = Ps
    primal = float(Ps @ cs)
    dual = float(lam * rho + nu + lam * np.sum(Qs * conjugate_mod_chi2((cs - nu) / lam)))
    div = mod_chi2_divergence(Ps, Qs)
    scale = max(1.0, abs(primal))
    if abs(primal - dual) > 1e-6 * scale:
        raise ArithmeticError(f"inner duality gap {abs(primal - dual):.3g} exceeds tolerance")
    if abs(div - rho) > max(tol, 1e-9 * rho) * 1e3:
        raise ArithmeticError(f"worst case off the ball boundary: divergence {div} vs rho {rho}")
    return InnerSolution(P, float(lam), float(nu), primal, dual, div)


def verify_cone_encoding(lam: float, u: float, z: float) -> bool:
    """Second-order cone form ``sqrt(4 z^2 + (lam - u)^2) <= lam + u`` of ``lam * u >= z^2``.

    Checks the float cone inequality and cross-checks it against the rotated
    form evaluated in exact rational arithmetic whenever the float margin is
    not dominated by rounding.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    lhs = math.hypot(2.0 * z, lam - u)
    rhs = lam + u
    cone = lhs <= rhs
    L, U, Z = Fraction(lam), Fraction(u), Fraction(z)
    exact = (L * U >= Z * Z) and (L + U >= 0)
    margin = 1e-12 * max(1.0, abs(lam), abs(u), abs(z))
    if abs(rhs - lhs) > margin and cone != exact:
        raise AssertionError(f"cone and rotated forms disagree at lam={lam}, u={u}, z={z}")
    return cone if abs(rhs - lhs) > margin else exact


@dataclass(frozen=True)
class DistributionSummary:
    divergence: float
    kld: float
    entropy: float
    total_ev: float
    total_variance: float
    total_skewness: float
    popped: int
    suppressed: int


def distribution_summary(P, Q, i_max, rounding_dp: int = 6) -> DistributionSummary:
    """Distance, entropy and moment statistics of a joint law ``P`` against ``Q``.

    Totals are sums over days of the marginal mean, variance and skewness.
    Popped intakes have rounded ``P > 0`` where rounded ``Q == 0``;
    suppressed ones the reverse.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    shape = tuple(int(m) + 1 for m in i_max)
    if P.shape != Q.shape or P.size != int(np.prod(shape)):
        raise ValueError("P and Q must be joint laws over the same intake space")
    pos = P > 0
    with np.errstate(divide="ignore"):
        if np.any(pos & (Q <= 0)):
            kld = math.inf
        else:
            kld = float(np.sum(P[pos] * np.log(P[pos] / Q[pos])))
        entropy = float(-np.sum(P[pos] * np.log(P[pos]))) + 0.0
    div = float(np.sum((P[Q > 0] - Q[Q > 0]) ** 2 / Q[Q > 0])) + (math.inf if np.any(pos & (Q <= 0)) else 0.0)
    joint = P.reshape(shape)
    ev = var = skew = 0.0
    for t, n in enumerate(shape):
        marg = joint.sum(axis=tuple(a for a in range(len(shape)) if a != t))
        x = np.arange(n)
        m = marg @ x
        v = marg @ (x - m) ** 2
        ev += m
        var += v
        if v > 0:
            skew += (marg @ (x - m) ** 3) / v ** 1.5
    Pr, Qr = np.round(P, rounding_dp), np.round(Q, rounding_dp)
    popped = int(np.sum((Pr > 0) & (Qr == 0)))
    suppressed = int(np.sum((Pr == 0) & (Qr > 0)))
    return DistributionSummary(div, kld, entropy, float(ev), float(var), float(skew), popped, suppressed)


def distribution_hash(P, digits: int = 12) -> str:
    return hashlib.sha1(np.round(np.asarray(P, dtype=float), digits).tobytes()).hexdigest()[:12]


def solve_NP(instance: Instance, ambiguity: NonparametricAmbiguity, epsilon: float = 1e-4, max_cuts: int = 50,
             lattice=None) -> SolveReport:
    """Plan minimising the worst-case expected cost over the divergence ball."""
    start = time.perf_counter()
    space = ambiguity.space or IntakeSpace(instance.i_max)
    if space.cardinality > NP_MAX_SCENARIOS:
        raise ValueError(f"|I| = {space.cardinality} exceeds {NP_MAX_SCENARIOS}; too large for NP")
    if space.cardinality != ambiguity.Q.size:
        raise ValueError("nominal law does not match the instance's intake space")
    intakes = space.all_intakes()
    lattice = lattice if lattice is not None else build_lattice(instance)
    pool = [ScenarioEvaluator(instance, intakes, ambiguity.Q, label="Q")]
    laws = [ambiguity.Q]
    trace = []
    stop = "max_cuts"
    best = None
    masters = []
    for k in range(1, max_cuts + 1):
        sol = solve_min_max(instance, pool, lattice=lattice)
        if masters and sol.objective < masters[-1] - 1e-9:
            raise AssertionError("cut-loop master value decreased")
        masters.append(sol.objective)
        c = scenario_costs(instance, intakes, day_shifts(instance, sol.plan))
        inner = np_worst_case_distribution(c, ambiguity)
        trace.append(IterationRecord(k, [], sol.plan, sol.objective, None, inner.objective,
                                     {"lam": inner.lam, "nu": inner.nu, "divergence": inner.divergence}))
        if best is None or inner.objective < best[1].objective:
            best = (sol.plan, inner)
        if inner.objective <= sol.objective + epsilon / 2:
            stop = "tolerance"
            break
        if any(np.max(np.abs(inner.P - law)) < 1e-12 for law in laws):
            stop = "repeat"
            break
        pool.append(ScenarioEvaluator(instance, intakes, inner.P, label=f"P{k}"))
        laws.append(inner.P)
    plan, inner = best if stop == "max_cuts" else (trace[-1].plan, inner)
    return SolveReport("NP", plan, None, inner.objective, len(trace), trace, 1, sum(e.calls for e in pool),
                       time.perf_counter() - start, stop != "max_cuts", stop,
                       {"P": inner.P, "Q": ambiguity.Q, "rho": ambiguity.rho, "lam": inner.lam,
                        "divergence": inner.divergence, "distribution_hash": distribution_hash(inner.P),
                        "master_values": masters})
