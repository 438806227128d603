"""Generate a small grid, run every heuristic, and print the optimality summary."""
import sys
import tempfile

from dro_planning.experiments import SuiteConfig, aggregate_report, run_suite

cfg = SuiteConfig(horizons=[(3, 2), (4, 2)], pair_targets=[2, 3, 5], spare_high=5, spare_low=-5, N_values=[10, 50],
                  n_probs_values=[5, 10], algorithms=["CS", "CS_opt", "AO", "RO", "NP", "benders"],
                  max_intake_size=1000, seed=11)
out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="dro-suite-")
paths = run_suite(cfg, out)
report = aggregate_report([paths["results"]])
print(f"results in {out}")
print(f"{'algorithm':<9} {'n':>4} {'optimal%':>9} {'p-opt%':>8} {'y-opt%':>8} {'mean p-APG':>11}")
for name, s in report["overall"].items():
    print(f"{name:<9} {s['count']:>4} {s['optimal_pct']:>9.1f} {s['p_optimal_pct']:>8.1f} {s['y_optimal_pct']:>8.1f} "
          f"{s['mean_p_apg']:>11.4f}")
