"""Distributionally robust tactical planning of pull-forward decisions under uncertain intake."""

__version__ = "0.1.0"

from .planning import (Instance, IntakeDomainError, PlanStructureError, PullForwardPlan, RolloverTrajectory,
                       Violation, all_pairs, day_shifts, feasible_pairs, is_feasible, rollover_trajectory,
                       validate_plan)
from .intake import (IntakeSpace, ParametricAmbiguitySet, ReducedIntakeSet, binomial_pmf, build_base_grid,
                     build_confidence_set, build_extreme_set, chi_square_quantile, joint_pmf, mle_success_probs,
                     reduce_intake_set, space_cardinality)
from .expectation import (PMFCache, expected_cost_convolution, expected_cost_enumeration, expected_cost_reduced,
                          rollover_distribution)
from .lp import LinearProgram, LPResult, MIPResult, lp_solve, mip_solve
from .minmax import (BinomialEvaluator, CostEvaluator, MasterSolution, PlanLattice, ScenarioEvaluator,
                     build_lattice, solve_min_max)
from .parametric import (BendersState, SolveReport, brute_force_metrics, distribution_separation, solve_AO,
                         solve_benders, solve_CS, solve_CS_opt, solve_cutting_surface, solve_exact_P, solve_oracle,
                         solve_RO)
from .nonparametric import (NonparametricAmbiguity, compute_rho, conjugate_mod_chi2, distribution_summary,
                            mod_chi2_divergence, np_worst_case_distribution, solve_NP, verify_cone_encoding)
