"""Two-day planning example: one pull-forward pair, 20 possible arrivals per day.

Runs the exact min-max solve, the cutting-surface heuristics, the reduced
intake variant and the robust baseline, printing each master iterate.
"""
from dro_planning import (Instance, build_confidence_set, build_extreme_set, build_lattice, solve_AO, solve_CS,
                          solve_CS_opt, solve_exact_P, solve_RO)

inst = Instance(L=2, K=1, capacity=(30, 10), workstack=(5, 20), rollover_cost=(1, 1), i_max=(20, 20))
theta = build_confidence_set((0.75, 0.75), N=10, i_max=inst.i_max, alpha=0.005, n_probs=100)
print(f"|Theta| = {len(theta)}, extreme members = {build_extreme_set(theta).tuples()}")

lattice = build_lattice(inst)
for name, rep in [("P", solve_exact_P(inst, theta, lattice=lattice)),
                  ("CS", solve_CS(inst, theta, lattice=lattice)),
                  ("CS_opt", solve_CS_opt(inst, theta, lattice=lattice)),
                  ("AO", solve_AO(inst, theta, 1e-3, lattice=lattice))]:
    print(f"\n{name}: y = {rep.plan}, p = {tuple(round(v, 2) for v in rep.p)}, cost = {rep.objective:.3f}, "
          f"PMF tables = {rep.pmf_tables}, stop = {rep.stop_reason}")
    for rec in rep.trace:
        print(f"  k={rec.k} y={rec.plan} t={rec.t:.3f} C={rec.C:.3f}")

ro = solve_RO(inst)
print(f"\nRO: y = {ro.plan}, deterministic cost at i_max = {ro.objective:g}")
