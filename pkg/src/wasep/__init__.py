"""Weakly asymmetric simple exclusion: exact simulation, tilted dynamics
and moderate-deviation rate numerics."""

from .model import (
    AssumptionReport,
    Configuration,
    MarginalError,
    ScalingParams,
    a_n,
    chi,
    drift_velocity,
    replica_seed,
    sample_bernoulli,
    sample_perturbed,
    validate_assumption,
)
from .testfn import TestFunction  # noqa: F401
from .simulator import (
    PathRecord,
    ThinningError,
    TiltAccumulator,
    girsanov_weight,
    log_martingale,
    mdp_estimate,
    simulate,
    simulate_tilted,
)
from .observables import (
    FieldSample,
    LocalFunction,
    OccupationTrajectory,
    fluctuation_field,
    ftilde,
    occupation_time,
    q_n_integral,
    q_n_observable,
    relative_entropy_initial,
)
from .rate import (
    CovMatrix,
    ProfilePair,
    cov_matrix,
    fbm_cov,
    fbm_kernel,
    fbm_sample,
    finite_dim_rate,
    heat_kernel,
    i_path,
    minimize_path_rate,
    minimizer_multi,
    optimal_profile,
    sigma_sq,
    solve_mu,
    verify_integrals,
)

__version__ = "0.1.0"

__all__ = [
    "TestFunction",
    "AssumptionReport",
    "Configuration",
    "MarginalError",
    "ScalingParams",
    "a_n",
    "chi",
    "drift_velocity",
    "replica_seed",
    "sample_bernoulli",
    "sample_perturbed",
    "validate_assumption",
    "PathRecord",
    "ThinningError",
    "TiltAccumulator",
    "girsanov_weight",
    "log_martingale",
    "mdp_estimate",
    "simulate",
    "simulate_tilted",
    "FieldSample",
    "LocalFunction",
    "OccupationTrajectory",
    "fluctuation_field",
    "ftilde",
    "occupation_time",
    "q_n_integral",
    "q_n_observable",
    "relative_entropy_initial",
    "CovMatrix",
    "ProfilePair",
    "cov_matrix",
    "fbm_cov",
    "fbm_kernel",
    "fbm_sample",
    "finite_dim_rate",
    "heat_kernel",
    "i_path",
    "minimize_path_rate",
    "minimizer_multi",
    "optimal_profile",
    "sigma_sq",
    "solve_mu",
    "verify_integrals",
]
