import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance
from dro_planning import (BendersState, Instance, ParametricAmbiguitySet, PullForwardPlan, brute_force_metrics,
                          build_confidence_set, build_extreme_set, build_lattice, distribution_separation,
                          expected_cost_convolution, solve_AO, solve_benders, solve_CS, solve_CS_opt,
                          solve_cutting_surface, solve_exact_P, solve_oracle, solve_RO)
from dro_planning.parametric import _Residual, robust_worst_intake

Y9 = PullForwardPlan({(2, 1): 9})


@pytest.fixture(scope="module")
def reports(two_day, two_day_set, two_day_lattice):
    return {
        "P": solve_exact_P(two_day, two_day_set, lattice=two_day_lattice),
        "CS": solve_CS(two_day, two_day_set, lattice=two_day_lattice),
        "CS_opt": solve_CS_opt(two_day, two_day_set, lattice=two_day_lattice),
        "AO": solve_AO(two_day, two_day_set, 1e-3, lattice=two_day_lattice),
        "oracle": solve_oracle(two_day, two_day_set, lattice=two_day_lattice),
        "benders": solve_benders(two_day, two_day_set, 1e-8),
    }


def test_exact_P_two_day(reports):
    r = reports["P"]
    assert r.plan == Y9
    assert r.p == pytest.approx((0.82, 0.82))
    assert r.objective == pytest.approx(19.2, abs=0.05)
    assert r.pmf_tables == 305


def test_separation_examples(two_day, two_day_set):
    ext = build_extreme_set(two_day_set)
    p, _ = distribution_separation(two_day, PullForwardPlan({(2, 1): 10}), ext)
    assert p == pytest.approx((0.84, 0.79))
    p, C = distribution_separation(two_day, Y9, two_day_set)
    assert p == pytest.approx((0.82, 0.82)) and C == pytest.approx(19.2, abs=0.05)
    single = ParametricAmbiguitySet.from_members([[0.3, 0.6]])
    assert distribution_separation(two_day, Y9, single)[0] == (0.3, 0.6)


def test_cs_two_day(reports):
    r = reports["CS"]
    assert [rec.plan[(2, 1)] for rec in r.trace] == [10, 8, 9]
    assert r.plan == Y9 and r.p == pytest.approx((0.84, 0.79))
    assert r.objective == pytest.approx(19.07, abs=0.01)
    assert r.converged and r.pmf_tables == 3  # p_init plus the two extreme members


def test_cs_opt_two_day(reports):
    r = reports["CS_opt"]
    assert r.plan == Y9 and r.p == pytest.approx((0.82, 0.82))
    assert r.stop_reason == "repeat" and r.iterations == 4


def test_ao_two_day(reports):
    r = reports["AO"]
    assert r.extra["reduced_size"] == 150
    assert r.plan == Y9 and r.p == pytest.approx((0.82, 0.82))
    assert r.extra["truncated_objective"] <= r.objective


def test_oracle_and_benders_agree_with_P(reports):
    for name in ("oracle", "benders"):
        assert reports[name].plan == Y9
        assert reports[name].objective == pytest.approx(reports["P"].objective, abs=1e-8)


def test_benders_lp_route_agrees(two_day, two_day_set):
    r = solve_benders(two_day, two_day_set, 1e-8, subproblem="lp")
    assert r.plan == Y9 and r.converged
    assert not r.extra["state"].feasibility_cuts


def test_ro_two_day(two_day):
    r = solve_RO(two_day)
    assert r.plan == PullForwardPlan({(2, 1): 5})
    assert r.objective == 25
    assert r.extra["worst_intake"] == (20, 20)
    # direct enumeration of the deterministic model at i_max
    from dro_planning import rollover_trajectory

    costs = [rollover_trajectory(two_day, PullForwardPlan({(2, 1): y}), (20, 20)).total_cost for y in range(21)]
    assert min(costs) == 25 and int(np.argmin(costs)) == 5


def test_ro_without_intake():
    inst = Instance(3, 2, (10, 3, 10), (4, 6, 12), (1, 2, 3), (0, 0, 0))
    r = solve_RO(inst)
    theta = ParametricAmbiguitySet.from_members([[0.5, 0.5, 0.5]])
    assert r.objective == pytest.approx(solve_exact_P(inst, theta).objective)


def test_gap_metrics_two_day(two_day, two_day_set, reports):
    z = reports["P"].objective
    g = brute_force_metrics(two_day, two_day_set, reports["CS"], z)
    assert g.p_gap == pytest.approx(0.13, abs=0.01) and g.y_gap == pytest.approx(0, abs=1e-9)
    assert g.p_apg == pytest.approx(100 * g.p_gap / g.worst_cost)
    own = brute_force_metrics(two_day, two_day_set, reports["P"], z)
    assert own.as_tuple() == pytest.approx((0, 0, 0, 0), abs=1e-9)


def test_report_objective_is_recomputable(two_day, reports):
    for name in ("P", "CS", "CS_opt", "AO", "oracle", "benders"):
        r = reports[name]
        assert r.objective == pytest.approx(expected_cost_convolution(two_day, r.plan, r.p), abs=1e-8)


def test_singleton_theta_one_iteration(two_day):
    theta = ParametricAmbiguitySet.from_members([[0.75, 0.75]])
    r = solve_CS_opt(two_day, theta)
    assert r.iterations == 1 and r.plan == PullForwardPlan({(2, 1): 10})


def test_ao_beta_zero_is_exact_P():
    inst = Instance(3, 1, (12, 8, 6), (4, 9, 8), (1, 1, 2), (3, 4, 2))
    theta = build_confidence_set((0.6, 0.5, 0.7), 20, inst.i_max, 0.05, 10)
    ao = solve_AO(inst, theta, 0.0)
    p = solve_exact_P(inst, theta)
    assert ao.plan == p.plan and ao.objective == pytest.approx(p.objective, abs=1e-9)
    assert ao.extra["truncated_objective"] == pytest.approx(p.objective, abs=1e-9)


def test_non_converged_cs_returns_best_iterate(two_day, two_day_set):
    r = solve_CS(two_day, two_day_set, k_max=1)
    assert not r.converged and r.stop_reason == "k_max"
    assert r.objective == min(rec.C for rec in r.trace)
    with pytest.raises(ValueError):
        solve_CS(two_day, two_day_set, epsilon=0.0)
    with pytest.raises(ValueError):
        solve_CS(two_day, two_day_set, k_max=0)


def test_benders_bounds_monotone(two_day, two_day_set):
    state = BendersState()
    solve_benders(two_day, two_day_set, 1e-8, state=state)
    assert all(b >= a - 1e-9 for a, b in zip(state.LB, state.LB[1:]))
    assert all(b <= a + 1e-9 for a, b in zip(state.UB, state.UB[1:]))
    assert state.LB[-1] <= state.UB[-1] + 1e-8
    assert not state.feasibility_cuts


def _small_case(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, L=int(rng.integers(2, 4)), max_imax=3, cap=6)
    N = int(rng.choice([5, 10, 30]))
    p_hat = rng.uniform(0.2, 0.8, size=inst.L)
    theta = build_confidence_set(p_hat, N, np.maximum(inst.i_max, 1), 0.05, 10)
    return inst, theta


@pytest.mark.parametrize("seed", range(15))
def test_benders_analytic_dual_matches_lp(seed):
    inst, theta = _small_case(seed)
    res = _Residual(inst, theta)
    rng = np.random.default_rng(seed)
    lat = build_lattice(inst)
    y = lat.reps[int(rng.integers(0, len(lat)))].astype(float)
    u, v, value, k = res.analytic_dual(y)
    status, u2, v2, value2, k2 = res.lp_dual(y)
    assert status == "optimal"
    assert value == pytest.approx(value2, abs=1e-7)
    # both dual solutions give cuts that are tight at y and valid elsewhere
    for uu in (u, u2):
        alpha, beta = res.cut(uu)
        assert alpha + beta @ y == pytest.approx(value, abs=1e-7)
        for row in lat.reps:
            assert alpha + beta @ row <= res.primal(row.astype(float))[1].max() + 1e-7


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1))
def test_solvers_against_brute_force(seed):
    inst, theta = _small_case(seed)
    lat = build_lattice(inst)
    ref = solve_exact_P(inst, theta, lattice=lat)
    orc = solve_oracle(inst, theta, lattice=lat)
    assert orc.objective == pytest.approx(ref.objective, abs=1e-9)
    ben = solve_benders(inst, theta, 1e-8)
    assert brute_force_metrics(inst, theta, ben, ref.objective).y_gap == pytest.approx(0, abs=1e-6)
    cs = solve_CS(inst, theta, lattice=lat)
    g = brute_force_metrics(inst, theta, cs, ref.objective)
    assert g.p_gap >= -1e-8 and g.y_gap >= -1e-8
    # with an initial member taken from the set, the master is a relaxation of P
    p0 = next(iter(theta))
    opt = solve_cutting_surface(inst, theta, theta, p_init=p0, lattice=lat)
    assert opt.objective <= ref.objective + 1e-9
    # and its plan is within epsilon / 2 (default 0.01) of optimal
    assert brute_force_metrics(inst, theta, opt, ref.objective).y_gap <= 0.005 + 1e-9
    ro = solve_RO(inst, lattice=lat)
    assert ro.objective >= ref.objective - 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_robust_worst_intake_is_imax(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, max_imax=4)
    lat = build_lattice(inst)
    plan = lat.plan(int(rng.integers(0, len(lat))))
    i, cost = robust_worst_intake(inst, plan)
    assert i == inst.i_max
