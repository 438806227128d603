"""Compare the binomial ambiguity set with a modified chi-square ball of matching confidence."""
import numpy as np

from dro_planning import (Instance, IntakeSpace, NonparametricAmbiguity, build_confidence_set, distribution_summary,
                          solve_exact_P, solve_NP)
from dro_planning.intake import joint_pmf_all
from dro_planning.parametric import brute_force_metrics

inst = Instance(L=3, K=2, capacity=(30, 30, 30), workstack=(25, 35, 22), rollover_cost=(1, 1, 1), i_max=(4, 5, 6))
p_hat = np.full(3, 0.75)
space = IntakeSpace(inst.i_max)

print(f"{'N':>6} {'rho':>8} {'P cost':>8} {'NP cost':>8} {'NP p_gap':>9} {'KLD(P)':>8} {'KLD(NP)':>8}")
for N in (5, 10, 50, 200):
    theta = build_confidence_set(p_hat, N, inst.i_max, 0.05, 10)
    P = solve_exact_P(inst, theta)
    amb = NonparametricAmbiguity.from_p_hat(inst.i_max, p_hat, N, 0.05)
    NP = solve_NP(inst, amb)
    gap = brute_force_metrics(inst, theta, NP, P.objective).p_gap
    kp = distribution_summary(joint_pmf_all(P.p, space), amb.Q, inst.i_max).kld
    kn = distribution_summary(NP.extra["P"], amb.Q, inst.i_max).kld
    print(f"{N:>6} {amb.rho:>8.4f} {P.objective:>8.3f} {NP.objective:>8.3f} {gap:>9.3f} {kp:>8.4f} {kn:>8.4f}")
