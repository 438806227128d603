"""Small self-contained LP / MIP solver.

``lp_solve`` is a dense revised simplex (two phases, explicit basis inverse
with periodic refactorisation, Dantzig pricing with a Bland's-rule fallback
when pivots stall on degenerate vertices).  ``mip_solve`` runs best-bound
branch and bound over ``lp_solve`` relaxations.

Dual sign convention: ``duals[i]`` is the derivative of the optimal objective
with respect to ``b[i]``.  In a minimisation, ``>=`` rows therefore have
non-negative duals and ``<=`` rows non-positive duals.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

FEAS_TOL = 1e-7
OPT_TOL = 1e-7
PIVOT_TOL = 1e-9
INT_TOL = 1e-6


@dataclass
class LinearProgram:
    """``min/max c.x`` subject to ``A x (<=|=|>=) b`` and ``lower <= x <= upper``.

    The matrix is held as sparse triplets; ``add_var`` and ``add_row`` build
    a model incrementally.
    """

    c: List[float] = field(default_factory=list)
    lower: List[float] = field(default_factory=list)
    upper: List[float] = field(default_factory=list)
    integer: List[bool] = field(default_factory=list)
    names: List[str] = field(default_factory=list)
    rows: List[int] = field(default_factory=list)
    cols: List[int] = field(default_factory=list)
    vals: List[float] = field(default_factory=list)
    senses: List[str] = field(default_factory=list)
    b: List[float] = field(default_factory=list)
    maximize: bool = False

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_rows(self) -> int:
        return len(self.b)

    def add_var(self, cost=0.0, lower=0.0, upper=math.inf, integer=False, name="") -> int:
        self.c.append(float(cost))
        self.lower.append(float(lower))
        self.upper.append(float(upper))
        self.integer.append(bool(integer))
        self.names.append(name)
        return self.n_vars - 1

    def add_row(self, coeffs, sense: str, rhs: float) -> int:
        """``coeffs`` maps variable index to coefficient (dict or iterable of pairs)."""
        if sense not in ("<=", "=", ">="):
            raise ValueError(f"unknown constraint sense {sense!r}")
        r = self.n_rows
        items = coeffs.items() if hasattr(coeffs, "items") else coeffs
        for j, v in items:
            if v != 0.0:
                if not 0 <= j < self.n_vars:
                    raise IndexError(f"variable {j} does not exist")
                self.rows.append(r)
                self.cols.append(int(j))
                self.vals.append(float(v))
        self.senses.append(sense)
        self.b.append(float(rhs))
        return r

    def dense(self) -> np.ndarray:
        A = np.zeros((self.n_rows, self.n_vars))
        np.add.at(A, (np.asarray(self.rows, dtype=int), np.asarray(self.cols, dtype=int)), self.vals)
        return A

    def check(self) -> None:
        arrays = [self.c, self.b, self.vals]
        if any(not np.all(np.isfinite(np.asarray(a, dtype=float))) for a in arrays):
            raise ValueError("LP coefficients must be finite")
        lo, up = np.asarray(self.lower), np.asarray(self.upper)
        if np.any(lo > up):
            raise ValueError("variable lower bound exceeds upper bound")


@dataclass
class LPResult:
    status: str  # optimal | infeasible | unbounded | iteration_limit
    x: Optional[np.ndarray] = None
    objective: float = math.nan
    duals: Optional[np.ndarray] = None
    ray: Optional[np.ndarray] = None
    iterations: int = 0


class _StandardForm:
    """``min cs.z  s.t.  As z = bs, z >= 0`` with ``x = offset + T z``."""

    def __init__(self, lp: LinearProgram, lower, upper):
        A = lp.dense()
        n = lp.n_vars
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        sign = -1.0 if lp.maximize else 1.0
        c = sign * np.asarray(lp.c, dtype=float)
        cols, costs, extra_rows = [], [], []
        self.offset = np.zeros(n)
        T_entries = []  # (x index, z index, coefficient)
        z = 0
        for j in range(n):
            lo, up = lower[j], upper[j]
            if np.isfinite(lo):
                self.offset[j] = lo
                T_entries.append((j, z, 1.0))
                costs.append(c[j])
                if np.isfinite(up):
                    extra_rows.append((z, up - lo))
                z += 1
            elif np.isfinite(up):
                self.offset[j] = up
                T_entries.append((j, z, -1.0))
                costs.append(-c[j])
                z += 1
            else:
                T_entries.append((j, z, 1.0))
                T_entries.append((j, z + 1, -1.0))
                costs.extend([c[j], -c[j]])
                z += 2
        nz = z
        T = np.zeros((n, nz))
        for j, k, v in T_entries:
            T[j, k] = v
        self.T = T
        m0 = lp.n_rows
        m = m0 + len(extra_rows)
        senses = list(lp.senses) + ["<="] * len(extra_rows)
        AT = np.zeros((m, nz))
        AT[:m0] = A @ T
        b = np.empty(m)
        b[:m0] = np.asarray(lp.b, dtype=float) - A @ self.offset
        for r, (k, cap) in enumerate(extra_rows):
            AT[m0 + r, k] = 1.0
            b[m0 + r] = cap
        n_slack = sum(s != "=" for s in senses)
        As = np.zeros((m, nz + n_slack))
        As[:, :nz] = AT
        slack_of_row = [-1] * m
        k = nz
        for r, s in enumerate(senses):
            if s == "<=":
                As[r, k] = 1.0
            elif s == ">=":
                As[r, k] = -1.0
            if s != "=":
                slack_of_row[r] = k
                k += 1
        flip = np.where(b < 0, -1.0, 1.0)
        As *= flip[:, None]
        b *= flip
        self.A = As
        self.b = b
        self.c = np.concatenate([np.asarray(costs), np.zeros(n_slack)])
        self.flip = flip
        self.m0 = m0
        self.nz = nz
        self.sign = sign
        self.slack_of_row = slack_of_row


def _pivot(Binv, alpha, r):
    """Product-form update of the basis inverse; touches only rows with alpha != 0."""
    row_r = Binv[r] / alpha[r]
    nz = np.flatnonzero(alpha)
    Binv[nz] -= alpha[nz, None] * row_r[None, :]
    Binv[r] = row_r


def _simplex(A, b, c, basis, Binv, allowed, max_iter, tol_opt=OPT_TOL):
    """Revised simplex on ``min c.z, A z = b, z >= 0`` from a feasible basis."""
    m, N = A.shape
    xB = Binv @ b
    degenerate_run = 0
    bland = False
    it = 0
    since_refactor = 0
    while True:
        if it >= max_iter:
            return "iteration_limit", basis, Binv, xB, None, it
        pi = c[basis] @ Binv
        d = c - pi @ A
        d[~allowed] = 0.0
        d[basis] = 0.0
        if bland:
            cand = np.flatnonzero(d < -tol_opt)
            if cand.size == 0:
                return "optimal", basis, Binv, xB, None, it
            q = int(cand[0])
        else:
            q = int(np.argmin(d))
            if d[q] >= -tol_opt:
                return "optimal", basis, Binv, xB, None, it
        alpha = Binv @ A[:, q]
        pos = alpha > PIVOT_TOL
        if not np.any(pos):
            ray = np.zeros(N)
            ray[q] = 1.0
            ray[basis] = -alpha
            return "unbounded", basis, Binv, xB, ray, it
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(xB[pos], 0.0) / alpha[pos]
        theta = ratios.min()
        ties = np.flatnonzero(ratios <= theta + 1e-12)
        if bland:
            r = int(ties[np.argmin(np.asarray(basis)[ties])])
        else:
            r = int(ties[np.argmax(alpha[ties])])
        if theta <= 1e-12:
            degenerate_run += 1
            if degenerate_run > 50:
                bland = True
        else:
            degenerate_run = 0
            bland = False
        # pivot
        xB = xB - theta * alpha
        xB[r] = theta
        _pivot(Binv, alpha, r)
        basis[r] = q
        it += 1
        since_refactor += 1
        if since_refactor >= 100:
            Binv = np.linalg.inv(A[:, basis])
            xB = Binv @ b
            since_refactor = 0


def lp_solve(lp: LinearProgram, lower=None, upper=None, max_iter: int = 50000) -> LPResult:
    """Solve the continuous relaxation of ``lp`` (integrality flags are ignored).

    ``lower``/``upper`` override the variable bounds (used by branch and bound).
    """
    lp.check()
    lower = np.asarray(lp.lower if lower is None else lower, dtype=float)
    upper = np.asarray(lp.upper if upper is None else upper, dtype=float)
    if np.any(lower > upper + FEAS_TOL):
        return LPResult("infeasible")
    sf = _StandardForm(lp, lower, np.maximum(upper, lower))
    m, N0 = sf.A.shape
    if m == 0:
        # no rows: each variable sits at the bound favoured by its cost
        if np.any(sf.c < -OPT_TOL):
            j = int(np.argmin(sf.c))
            ray = np.zeros(N0)
            ray[j] = 1.0
            return LPResult("unbounded", ray=sf.T @ ray)
        x = sf.offset.copy()
        return LPResult("optimal", x=x, objective=float(np.dot(lp.c, x)), duals=np.zeros(0))
    # initial basis: slacks with +1 coefficient where available, artificials elsewhere
    basis = []
    art_rows = []
    for r in range(m):
        k = sf.slack_of_row[r]
        if k >= 0 and sf.A[r, k] > 0:
            basis.append(k)
        else:
            basis.append(-1)
            art_rows.append(r)
    n_art = len(art_rows)
    A = np.hstack([sf.A, np.zeros((m, n_art))])
    for a, r in enumerate(art_rows):
        A[r, N0 + a] = 1.0
        basis[r] = N0 + a
    N = N0 + n_art
    Binv = np.eye(m)
    allowed = np.ones(N, dtype=bool)
    total_it = 0
    if n_art:
        c1 = np.zeros(N)
        c1[N0:] = 1.0
        status, basis, Binv, xB, _, it = _simplex(A, sf.b, c1, basis, Binv, allowed, max_iter)
        total_it += it
        if status == "iteration_limit":
            return LPResult(status, iterations=total_it)
        infeas = float(c1[basis] @ xB)
        if infeas > FEAS_TOL * max(1.0, np.abs(sf.b).max()):
            return LPResult("infeasible", iterations=total_it)
        # drive zero-level artificials out of the basis where possible
        for r in range(m):
            if basis[r] >= N0:
                row = Binv[r] @ A[:, :N0]
                structural = [k for k in basis if k < N0]
                row[structural] = 0.0
                cand = np.flatnonzero(np.abs(row) > 1e-9)
                if cand.size:
                    q = int(cand[np.argmax(np.abs(row[cand]))])
                    _pivot(Binv, Binv @ A[:, q], r)
                    basis[r] = q
        allowed[N0:] = False
        Binv = np.linalg.inv(A[:, basis])
    c2 = np.concatenate([sf.c, np.zeros(n_art)])
    status, basis, Binv, xB, ray, it = _simplex(A, sf.b, c2, basis, Binv, allowed, max_iter - total_it)
    total_it += it
    if status == "unbounded":
        return LPResult("unbounded", ray=sf.T @ ray[:sf.nz], iterations=total_it)
    if status != "optimal":
        return LPResult(status, iterations=total_it)
    zfull = np.zeros(N)
    zfull[basis] = np.maximum(xB, 0.0)
    x = sf.offset + sf.T @ zfull[:sf.nz]
    pi = c2[basis] @ Binv
    duals = sf.sign * (pi * sf.flip)[:sf.m0]
    return LPResult("optimal", x=x, objective=float(np.dot(lp.c, x)), duals=duals, iterations=total_it)


@dataclass
class MIPResult:
    status: str  # optimal | infeasible | unbounded | node_limit
    x: Optional[np.ndarray] = None
    objective: float = math.nan
    bound: float = math.nan
    nodes: int = 0


def mip_solve(lp: LinearProgram, max_nodes: int = 20000, gap_tol: float = 1e-9) -> MIPResult:
    """Best-bound branch and bound; branches on the most fractional integer variable."""
    is_int = np.asarray(lp.integer, dtype=bool)
    sense = -1.0 if lp.maximize else 1.0  # work with a minimisation internally
    lo0 = np.asarray(lp.lower, dtype=float)
    up0 = np.asarray(lp.upper, dtype=float)
    lo0 = np.where(is_int & np.isfinite(lo0), np.ceil(lo0 - INT_TOL), lo0)
    up0 = np.where(is_int & np.isfinite(up0), np.floor(up0 + INT_TOL), up0)
    counter = itertools.count()
    root = lp_solve(lp, lo0, up0)
    if root.status != "optimal":
        return MIPResult(root.status, nodes=1)
    heap = [(sense * root.objective, next(counter), lo0, up0, root)]
    best_x, best_val = None, math.inf
    nodes = 1

    def cutoff():
        return best_val - gap_tol * max(1.0, abs(best_val)) if best_x is not None else math.inf

    while heap:
        bound, _, lo, up, res = heapq.heappop(heap)
        if bound >= cutoff():
            continue
        frac = np.abs(res.x - np.round(res.x))
        frac[~is_int] = 0.0
        j = int(np.argmax(frac))
        if frac[j] <= INT_TOL:
            x = res.x.copy()
            x[is_int] = np.round(x[is_int])
            best_x, best_val = x, bound
            continue
        if nodes >= max_nodes:
            heapq.heappush(heap, (bound, next(counter), lo, up, res))
            break
        v = res.x[j]
        for child_lo, child_up in ((lo, np.where(np.arange(lo.size) == j, math.floor(v), up)),
                                   (np.where(np.arange(lo.size) == j, math.ceil(v), lo), up)):
            nodes += 1
            child = lp_solve(lp, child_lo, child_up)
            if child.status == "optimal":
                val = sense * child.objective
                if val < cutoff():
                    heapq.heappush(heap, (val, next(counter), child_lo, child_up, child))
            elif child.status == "unbounded":
                return MIPResult("unbounded", nodes=nodes)
    if heap and nodes >= max_nodes:
        lb = min(h[0] for h in heap)
        return MIPResult("node_limit", x=best_x, objective=sense * best_val if best_x is not None else math.nan,
                         bound=sense * lb, nodes=nodes)
    if best_x is None:
        return MIPResult("infeasible", nodes=nodes)
    return MIPResult("optimal", x=best_x, objective=sense * best_val, bound=sense * best_val, nodes=nodes)
