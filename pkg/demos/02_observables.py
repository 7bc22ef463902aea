"""Occupation time, fluctuation fields and the Q^n boundary functional.

Run with ``python demos/02_observables.py``.
"""
import numpy as np

from wasep import (ScalingParams, TestFunction, fluctuation_field, occupation_time,
                   q_n_integral, simulate)
from wasep.simulator import states_at

p = ScalingParams(n=64, L_macro=4, rho=0.5, alpha=0.0, theta=0.5, T=1.0)
grid = np.linspace(0.0, 1.0, 5)

# %% Occupation time Gamma_t of the origin, sampled on the grid
gam = np.array([occupation_time(simulate(p, seed=k, grid=grid), grid=grid).values
                for k in range(400)])
var = gam.var(axis=0, ddof=1)
# theta = 1/2, so the ratio approaches sigma^2(1/2) = 0.266 as n grows
print("Var(Gamma_t) / t^1.5:", np.round(var[1:] / grid[1:] ** 1.5, 3))

# %% Density fluctuation field paired with a bump
G = TestFunction.bump(1, amplitude=1.0, radius=1.5)
path = simulate(p, seed=3, grid=grid)
snaps = states_at(path, grid)
print("Y_t(G):", [round(fluctuation_field(snaps[i], G, grid[i], p), 4) for i in range(grid.size)])

# %% Q^n functional for a static bump under weak drift
for n in (16, 32):
    q = ScalingParams(n=n, L_macro=4, rho=0.5, alpha=1.0, beta=1.0, theta=0.75, T=1.0)
    res = q_n_integral(simulate(q, seed=0, grid=np.linspace(0, 1, 11)), G)
    print(f"n={n}: sup |Q^n| = {res['sup']:.4f}, terminal = {res['terminal']:+.4f}")
