"""Exponential martingales, Girsanov weights and the tilted hydrodynamics.

Run with ``python demos/05_tilted_dynamics.py``.
"""
import math

import numpy as np

from wasep import (ScalingParams, TestFunction, girsanov_weight, log_martingale, optimal_profile,
                   simulate, simulate_tilted)
from wasep import rate
from wasep.observables import fluctuation_field
from wasep.simulator import states_at

p = ScalingParams(n=32, L_macro=4, rho=0.5, alpha=0.0, theta=0.55, T=1.0)
H = TestFunction.bump(1, amplitude=1.0, radius=1.5)
phi = H.spatial(0.0)
reps = 1000

# %% The exponential martingale and the Girsanov weight both have mean one
logm, logw = [], []
for k in range(reps):
    path = simulate(p, seed=k)
    logm.append(log_martingale(path, H))
    logw.append(girsanov_weight(path, H, phi))
for name, x in (("exp(log M_T)", np.exp(logm)), ("Girsanov weight", np.exp(logw))):
    print("E %s = %.3f +- %.3f" % (name, x.mean(), x.std(ddof=1) / math.sqrt(reps)))
# the log-weights are nearly Gaussian; their variance sets how heavy the tails are
print("Var log M_T = %.2f, Var log weight = %.2f" % (np.var(logm), np.var(logw)))

# %% Tilting by the optimal profile moves the field towards mu
q = ScalingParams(n=32, L_macro=10, rho=0.5, alpha=0.0, beta=1.5, theta=0.55, T=1.0)
prof = optimal_profile(1.0, 0.5, q.rho)
Ht = prof.to_test_function(4.5)
grid = np.array([0.0, 0.5, 1.0])
vals = []
for k in range(100):
    path, _ = simulate_tilted(q, Ht, Ht.spatial(0.0), seed=k, grid=grid, weight=False)
    snaps = states_at(path, grid)
    vals.append([fluctuation_field(snaps[i], H, grid[i], q) for i in range(grid.size)])
vals = np.array(vals)
pred = [rate.field_prediction(prof, q.rho, t, H) for t in grid]
for i, t in enumerate(grid):
    print(f"t={t}: simulated {vals[:, i].mean():.3f} +- {vals[:, i].std(ddof=1) / math.sqrt(len(vals)):.3f}, "
          f"predicted {pred[i]:.3f}")
