"""Fractional Brownian motion with Hurst index 3/4 and its sample-path rate.

Run with ``python demos/04_fbm_path_rate.py``.
"""
import numpy as np

from wasep import fbm_cov, fbm_kernel, fbm_sample, finite_dim_rate, i_path, minimize_path_rate
from wasep import rate

# %% Moving-average kernel and its L2 norm
print("K(1, 0.25) =", round(fbm_kernel(1.0, 0.25), 6))
print("int K(t,s)^2 ds at t = 1, 2:", [round(rate.kernel_sq_integral(t), 8) for t in (1.0, 2.0)])

# %% Sampled covariance against t^1.5 + s^1.5 - |t - s|^1.5 (halved)
x = fbm_sample(np.array([0.5, 1.0]), seed=0, size=5000)
print("sample cov(0.5, 1) = %.4f, exact %.4f" % (np.mean(x[:, 0] * x[:, 1]), fbm_cov(0.5, 1.0)))

# %% Path rate: unit velocity costs T/2
grid = np.linspace(0.0, 1.0, 257)
gamma = np.array([rate.kernel_integral(t) for t in grid])
print("I_path(unit velocity) =", round(i_path(gamma, grid), 5))

# a random walk cannot be written as int K gdot; the inversion residual exposes it
walk = np.concatenate([[0.0], np.cumsum(np.random.default_rng(0).standard_normal(256)) / 16])
info = i_path(walk, grid, info=True)
print("I_path(random walk) =", info.value, " residual %.3g > threshold %.0e" % (info.residual,
                                                                               info.threshold))

# %% Minimizing the path rate under point constraints gives the finite-dimensional rate
g = np.linspace(0.0, 2.0, 257)
print("path minimum %.5f vs finite-dimensional %.5f" % (
    minimize_path_rate([1.0, 1.0], [1.0, 2.0], g), finite_dim_rate([1.0, 1.0], [1.0, 2.0], 0.5)))
