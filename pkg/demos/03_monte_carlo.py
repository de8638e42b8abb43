# %% [markdown]
# # Intra-patient variability: Scenarios 2A to 2D
#
# Each trial draws p1..p5 uniformly within +/-30 % (per scenario) and, for 2D,
# a random initial glucose and plasma insulin. Gains stay fixed at their
# nominal-parameter values. Set TRIALS to 100 for the full study.

# %%
import sys

from glucocontract.metrics import write_summary_csv
from glucocontract.scenarios import run_monte_carlo, scenario_config

TRIALS = int(sys.argv[1]) if len(sys.argv) > 1 else 20

# %%
rows = []
print(f"{'subj':>4} {'scen':>4} {'eu%':>6} {'hyper%':>7} {'hypo%':>6} {'mean':>7} {'HbA1c':>6} "
      f"{'LBGI':>5} {'HBGI':>5}  CVGA")
for label in ("1", "3", "5"):
    for scen in ("2A", "2B", "2C", "2D"):
        res = run_monte_carlo(scenario_config(scen, label, trial_count=TRIALS, master_seed=2024))
        a = res.aggregate
        zones = {k: v for k, v in a["cvga_counts"].items() if v}
        print(f"{label:>4} {scen:>4} {a['pct_eu']:6.1f} {a['pct_hyper']:7.1f} {a['pct_hypo']:6.1f} "
              f"{a['mean_bg']:7.1f} {a['hba1c']:6.2f} {a['lbgi']:5.2f} {a['hbgi']:5.2f}  {zones}")
        rows.append({"subject": label, "scenario": scen, **{k: a[k] for k in a if not isinstance(a[k], dict)}})

# %%
write_summary_csv("demo_output_summary.csv", rows)
