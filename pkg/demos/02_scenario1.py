# %% [markdown]
# # Scenario 1: three 75 g meals over 24 h
#
# Nominal patients, gains from the certificates, observer started from the
# first glucose reading and the basal insulin state. Glucose stays in the
# euglycemic band for all three subjects.

# %%
from pathlib import Path

import numpy as np

from glucocontract.metrics import glycemic_report
from glucocontract.model import equilibrium_for_setpoint
from glucocontract.scenarios import default_gains, observer_start, scenario1
from glucocontract.sim import simulate_closed_loop

out = Path("demo_output")
out.mkdir(exist_ok=True)

# %%
for label in ("1", "3", "5"):
    s = scenario1(label)
    eq = equilibrium_for_setpoint(s.patient, 120.0)
    g = default_gains(label)
    x0 = np.array(s.x0)
    traj = simulate_closed_loop(s.patient, eq, g.L, g.K, meals=s.meals, x0=x0, xh0=observer_start(x0, eq))
    traj.to_csv(out / f"scenario1_subject{label}.csv")
    r = glycemic_report(traj.glucose)
    peaks = [float(traj.glucose[(traj.times >= a) & (traj.times < a + 300)].max()) for a, _ in s.meals]
    print(f"subject {label}: min {r.min_bg:6.1f}  max {r.max_bg:6.1f}  mean {r.mean_bg:6.1f}  "
          f"TIR {r.pct_eu:5.1f}%  CVGA {r.cvga.value}  peaks {np.round(peaks, 1)}")

# %% [markdown]
# The CSVs hold t, true and estimated states, insulin and meal appearance,
# ready for external plotting.
