import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance
from dro_planning import (BinomialEvaluator, Instance, PMFCache, PullForwardPlan, ScenarioEvaluator, build_lattice,
                          expected_cost_convolution, feasible_pairs, is_feasible, solve_min_max)
from dro_planning.minmax import LatticeTooLarge, build_mip, lattice_index
from dro_planning.planning import day_shifts


def _all_plans(inst):
    pairs = feasible_pairs(inst).feasible_pairs
    boxes = [range(min(inst.workstack[t1 - 1], max(int(inst.spare[t2 - 1]), 0)) + 1) for t1, t2 in pairs]
    for vec in itertools.product(*boxes):
        plan = PullForwardPlan.from_vector(pairs, vec)
        if is_feasible(inst, plan):
            yield vec, plan


def _brute_min_max(inst, probs):
    best = None
    for vec, plan in _all_plans(inst):
        val = max(expected_cost_convolution(inst, plan, p) for p in probs)
        if best is None or val < best[0] - 1e-9:
            best = (val, vec, plan)
    return best


@pytest.mark.parametrize("seed", range(40))
def test_lattice_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, L=int(rng.integers(2, 5)), cap=5)
    lat = build_lattice(inst)
    plans = list(_all_plans(inst))
    shifts = {tuple(day_shifts(inst, plan)) for _, plan in plans}
    assert {tuple(s) for s in lat.shifts} == shifts
    assert len(lat) == len(shifts)
    assert lat.reps[0].sum() == 0
    # each representative is the lexicographically smallest plan of its class
    smallest = {}
    for vec, plan in plans:
        key = tuple(day_shifts(inst, plan))
        smallest.setdefault(key, vec)
    for k in range(len(lat)):
        assert tuple(lat.reps[k]) == smallest[tuple(lat.shifts[k])]
        assert is_feasible(inst, lat.plan(k))
        assert lattice_index(lat, lat.plan(k)) == k


def test_lattice_limit():
    inst = Instance(5, 2, [30] * 5, [5] * 5, [1] * 5, [1] * 5)
    with pytest.raises(LatticeTooLarge):
        build_lattice(inst, max_classes=10)


@pytest.mark.parametrize("seed", range(30))
def test_exact_search_matches_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    inst = random_instance(rng, L=int(rng.integers(2, 4)), max_imax=4, cap=5)
    probs = [tuple(rng.uniform(0, 1, size=inst.L)) for _ in range(int(rng.integers(1, 5)))]
    cache = PMFCache(inst.i_max)
    sol = solve_min_max(inst, [BinomialEvaluator(inst, p, cache) for p in probs])
    val, vec, plan = _brute_min_max(inst, probs)
    assert sol.objective == pytest.approx(val, abs=1e-9)
    # tie-break: lexicographically smallest optimal plan (among cost classes)
    assert sol.plan.vector(feasible_pairs(inst).feasible_pairs).tolist() == list(vec)
    assert sol.objective == pytest.approx(max(sol.values), abs=0)


@pytest.mark.parametrize("seed", range(12))
def test_mip_strategy_matches_exact(seed):
    rng = np.random.default_rng(300 + seed)
    inst = random_instance(rng, L=int(rng.integers(2, 4)), max_imax=2, cap=4)
    probs = [tuple(np.round(rng.uniform(0, 1, size=inst.L), 2)) for _ in range(2)]
    ev = [BinomialEvaluator(inst, p) for p in probs]
    exact = solve_min_max(inst, ev)
    mip = solve_min_max(inst, [BinomialEvaluator(inst, p) for p in probs], strategy="mip")
    assert mip.objective == pytest.approx(exact.objective, abs=1e-6)
    worst = max(expected_cost_convolution(inst, mip.plan, p) for p in probs)
    assert worst == pytest.approx(exact.objective, abs=1e-6)


def test_mip_strategy_two_day(two_day):
    members = [(0.79, 0.84), (0.82, 0.82), (0.84, 0.79)]
    exact = solve_min_max(two_day, [BinomialEvaluator(two_day, p) for p in members])
    mip = solve_min_max(two_day, [BinomialEvaluator(two_day, p) for p in members], strategy="mip")
    assert mip.plan == exact.plan == PullForwardPlan({(2, 1): 9})
    assert mip.objective == pytest.approx(exact.objective, abs=1e-6)
    assert exact.objective == pytest.approx(19.2, abs=0.05)


def test_build_mip_dimensions(two_day):
    lp, pairs, t = build_mip(two_day, [BinomialEvaluator(two_day, (0.5, 0.5))])
    assert pairs == ((2, 1),)
    assert lp.n_vars == 1 + 1 + 2 * 441
    assert lp.n_rows == 2 * 441 + 1


def test_two_day_masters(two_day, two_day_set, two_day_lattice):
    cache = PMFCache(two_day.i_max)
    first = solve_min_max(two_day, [BinomialEvaluator(two_day, (0.75, 0.75), cache)], lattice=two_day_lattice)
    assert first.plan == PullForwardPlan({(2, 1): 10})
    full = [BinomialEvaluator(two_day, p, cache) for p in two_day_set]
    sol = solve_min_max(two_day, full, lattice=two_day_lattice)
    assert sol.plan == PullForwardPlan({(2, 1): 9})
    assert full[sol.active_index].p == pytest.approx((0.82, 0.82))
    assert sol.objective == pytest.approx(19.2, abs=0.05)


def test_no_spare_means_zero_plan():
    inst = Instance(3, 2, (5, 5, 5), (5, 6, 7), (1, 1, 1), (3, 3, 3))
    sol = solve_min_max(inst, [BinomialEvaluator(inst, (0.5, 0.5, 0.5))])
    assert sol.plan == PullForwardPlan.zeros()


def test_requires_evaluators(two_day):
    with pytest.raises(ValueError):
        solve_min_max(two_day, [])
    with pytest.raises(ValueError):
        solve_min_max(two_day, [BinomialEvaluator(two_day, (0.5, 0.5))], strategy="other")


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1))
def test_objective_grows_with_evaluators(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_imax=4, cap=6)
    lat = build_lattice(inst)
    probs = [tuple(rng.uniform(0, 1, size=inst.L)) for _ in range(4)]
    prev = -np.inf
    for k in range(1, 5):
        sol = solve_min_max(inst, [BinomialEvaluator(inst, p) for p in probs[:k]], lattice=lat)
        assert sol.objective >= prev - 1e-12
        prev = sol.objective


def test_deterministic_output(two_day, two_day_lattice):
    ps = [(0.7, 0.8), (0.8, 0.7), (0.75, 0.75)]
    a = solve_min_max(two_day, [BinomialEvaluator(two_day, p) for p in ps], lattice=two_day_lattice)
    b = solve_min_max(two_day, [BinomialEvaluator(two_day, p) for p in ps], lattice=two_day_lattice)
    assert a.plan == b.plan and a.objective == b.objective and a.active_index == b.active_index


def test_scenario_evaluator_matches_binomial(two_day):
    from dro_planning import IntakeSpace
    from dro_planning.intake import joint_pmf_all

    space = IntakeSpace(two_day.i_max)
    p = (0.6, 0.9)
    scen = ScenarioEvaluator(two_day, space.all_intakes(), joint_pmf_all(p, space))
    binom = BinomialEvaluator(two_day, p)
    for y in (0, 5, 12):
        plan = PullForwardPlan({(2, 1): y})
        assert scen(plan) == pytest.approx(binom(plan), abs=1e-9)
