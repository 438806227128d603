import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from conftest import random_instance
from dro_planning import (Instance, IntakeDomainError, PlanStructureError, PullForwardPlan, all_pairs, day_shifts,
                          feasible_pairs, is_feasible, rollover_trajectory, validate_plan)


def test_zero_plan_is_feasible(two_day):
    assert validate_plan(two_day, PullForwardPlan.zeros()) == []


def test_two_day_optimum_feasible(two_day):
    assert is_feasible(two_day, PullForwardPlan({(2, 1): 9}))


def test_spare_violation_names_day(two_day):
    v = validate_plan(two_day, PullForwardPlan({(2, 1): 26}))
    # 26 also exceeds day 2's workstack of 20
    assert ("spare", 1, 25) in [(x.kind, x.day, x.limit) for x in v]
    assert [(x.kind, x.day) for x in validate_plan(two_day, PullForwardPlan({(2, 1): 20}))] == []


def test_workstack_violation():
    inst = Instance(2, 1, (30, 10), (0, 3), (1, 1), (0, 0))
    kinds = {x.kind for x in validate_plan(inst, PullForwardPlan({(2, 1): 4}))}
    assert kinds == {"workstack"}


def test_pair_outside_window_is_structural(two_day):
    with pytest.raises(PlanStructureError):
        validate_plan(two_day, PullForwardPlan({(3, 1): 1}))
    with pytest.raises(PlanStructureError):
        validate_plan(two_day, PullForwardPlan({(1, 2): 1}))


def test_negative_amount_rejected():
    with pytest.raises(ValueError):
        PullForwardPlan({(2, 1): -1})


@pytest.mark.parametrize("y, R, cost", [(9, (4, 25), 29), (5, (0, 25), 25)])
def test_two_day_trajectory(two_day, y, R, cost):
    tr = rollover_trajectory(two_day, PullForwardPlan({(2, 1): y}), (20, 20))
    assert tr.R == R
    assert tr.total_cost == cost


def test_zero_intake_zero_rollover():
    inst = Instance(3, 2, (5, 5, 5), (1, 2, 3), (1, 2, 3), (4, 4, 4))
    tr = rollover_trajectory(inst, PullForwardPlan.zeros(), (0, 0, 0))
    assert tr.R == (0, 0, 0) and tr.total_cost == 0


def test_intake_domain(two_day):
    with pytest.raises(IntakeDomainError):
        rollover_trajectory(two_day, PullForwardPlan.zeros(), (21, 0))
    with pytest.raises(IntakeDomainError):
        rollover_trajectory(two_day, PullForwardPlan.zeros(), (-1, 0))


def test_feasible_pairs_sparse_pattern():
    spare = np.array([8, -15, -15, 8, -15])
    D = np.full(5, 20)
    inst = Instance(5, 2, D + spare, D, np.ones(5), np.zeros(5, dtype=int))
    ps = feasible_pairs(inst)
    assert set(ps.feasible_pairs) == {(2, 1), (3, 1), (5, 4)}
    assert set(ps.feasible_pairs) <= set(ps.all_pairs)


def test_feasible_pairs_all_spare():
    inst = Instance(5, 2, [28] * 5, [20] * 5, [1] * 5, [0] * 5)
    assert len(feasible_pairs(inst).feasible_pairs) == 7


def test_single_pair_for_two_days():
    assert all_pairs(2, 1) == [(2, 1)]


def test_instance_validation():
    with pytest.raises(ValueError):
        Instance(2, 2, (1, 1), (1, 1), (1, 1), (1, 1))
    with pytest.raises(ValueError):
        Instance(2, 1, (1,), (1, 1), (1, 1), (1, 1))
    with pytest.raises(ValueError):
        Instance(2, 1, (1, 1), (1, 1), (-1, 1), (1, 1))


def _random_plan(inst, rng):
    y = {}
    into = np.zeros(inst.L, dtype=int)
    out = np.zeros(inst.L, dtype=int)
    for (t1, t2) in feasible_pairs(inst).feasible_pairs:
        room = min(inst.workstack[t1 - 1] - out[t1 - 1], max(inst.spare[t2 - 1], 0) - into[t2 - 1])
        if room > 0:
            v = int(rng.integers(0, room + 1))
            y[(t1, t2)] = v
            into[t2 - 1] += v
            out[t1 - 1] += v
    return PullForwardPlan(y)


@given(st.integers(0, 2**31 - 1))
def test_random_plans_feasible_by_construction(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng)
    assert is_feasible(inst, _random_plan(inst, rng))


@given(st.integers(0, 2**31 - 1), st.integers(0, 10))
def test_rollover_monotone_in_intake(seed, day_pick):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_imax=4)
    plan = _random_plan(inst, rng)
    i = np.array([rng.integers(0, m + 1) for m in inst.i_max])
    t = day_pick % inst.L
    if i[t] == inst.i_max[t]:
        return
    j = i.copy()
    j[t] += 1
    lo = rollover_trajectory(inst, plan, i).R
    hi = rollover_trajectory(inst, plan, j).R
    assert all(b >= a for a, b in zip(lo, hi))


@given(st.integers(0, 2**31 - 1))
def test_more_capacity_never_more_rollover(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_imax=4)
    i = np.array([rng.integers(0, m + 1) for m in inst.i_max])
    t = int(rng.integers(0, inst.L))
    cap = list(inst.capacity)
    cap[t] += 1
    bigger = Instance(inst.L, inst.K, cap, inst.workstack, inst.rollover_cost, inst.i_max)
    plan = PullForwardPlan.zeros()
    a = rollover_trajectory(inst, plan, i).R
    b = rollover_trajectory(bigger, plan, i).R
    assert all(y <= x for x, y in zip(a, b))


@pytest.mark.parametrize("seed", range(25))
def test_rollover_is_minimal_lp_solution(seed):
    """Recursion equals the componentwise-minimal R of the inequality system (LP oracle)."""
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_imax=5)
    plan = _random_plan(inst, rng)
    i = np.array([rng.integers(0, m + 1) for m in inst.i_max])
    s = day_shifts(inst, plan)
    L = inst.L
    # R_t - R_{t-1} >= i_t + s_t  ->  -R_t + R_{t-1} <= -(i_t + s_t)
    A = np.zeros((L, L))
    for t in range(L):
        A[t, t] = -1.0
        if t:
            A[t, t - 1] = 1.0
    res = linprog(np.ones(L), A_ub=A, b_ub=-(i + s), bounds=[(0, None)] * L, method="highs")
    assert res.status == 0
    np.testing.assert_allclose(rollover_trajectory(inst, plan, i).R, res.x, atol=1e-9)
