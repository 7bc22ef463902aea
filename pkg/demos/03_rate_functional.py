"""Optimal profiles, the quadratic rate functional and finite-dimensional rates.

Run with ``python demos/03_rate_functional.py``.
"""
import numpy as np

from wasep import (finite_dim_rate, minimizer_multi, optimal_profile, sigma_sq, solve_mu,
                   verify_integrals)
from wasep import rate

rho = 0.5
print("sigma^2(1/2) = %.7f" % sigma_sq(rho))

# %% Heat-kernel identities checked by quadrature
for k, (num, exact) in verify_integrals(1.0).items():
    print(f"{k}: quadrature {num:.9f}  closed form {exact:.9f}")

# %% One-point optimal profile: the constraint and the cost
prof = optimal_profile(1.0, 1.0, rho)
print("int_0^1 mu(s, 0) ds =", round(rate.mu_time_integral(prof, rho, 1.0), 8))
print("Q(profile) =", round(rate.rate_functional(prof, rho), 6),
      " closed form =", round(1 / (2 * sigma_sq(rho)), 6))
u = np.linspace(-3, 3, 7)
print("mu(1, u):", np.round(solve_mu(prof, rho, 1.0, u), 4))

# %% Two constraints at once
alpha, times = [1.0, 1.0], [1.0, 2.0]
multi = minimizer_multi(alpha, times, rho)
print("finite-dimensional rate:", round(finite_dim_rate(alpha, times, rho), 6),
      " Q(minimizer):", round(rate.rate_functional(multi, rho), 6))
