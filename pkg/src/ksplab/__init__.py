"""Stochastic filtering laboratory.

Diffusion state models with integrated noisy observations, exact
Kalman-Bucy filtering for the linear case, particle and grid
approximations of the conditional distribution driven by the innovation
identity, finite-state master equations, and a latent-volatility pricing
application -- every approximate method cross-validated against an exact
or brute-force oracle.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .config import ConfigError, ExperimentConfig, parse_config, validate_config
from .filters import (
    EnsembleCollapseError,
    FilterEstimate,
    GridDensity,
    ParticleEnsemble,
    default_test_functions,
    ess,
    ksp_moment_functions,
    ksp_residual,
    pf_estimate,
    pf_init,
    pf_step,
    resample_systematic,
    run_grid_filter,
    run_particle_filter,
    stability_dt_bound,
    zakai_grid_step,
)
from .kalman import (
    GaussianBelief,
    LinearModel,
    RiccatiConvergenceError,
    kalman_step,
    riccati_rhs,
    run_kalman,
    steady_state_cov,
)
from .markov import (
    DistributionVector,
    RateMatrix,
    ReducibleChainError,
    TransitionKernel,
    evolve_kernel,
    generator_from_rates,
    master_rhs,
    rate_matrix_from_triplets,
    stationary_distribution,
    taylor_kernel_check,
)
from .observation import (
    NovikovReport,
    ObservationModel,
    ObservationPath,
    check_novikov,
    girsanov_log_weight,
    girsanov_log_weights_batch,
    simulate_observation,
)
from .rng import RngStream
from .sde import (
    DiffusionModel,
    InitialLaw,
    SamplePath,
    SimulationDivergenceError,
    apply_generator,
    constant_diffusion,
    ensemble_martingale_residuals,
    fd_grad,
    fd_hess,
    linear_drift,
    martingale_residual,
    simulate_ensemble,
    simulate_path,
    wiener_increments,
)
from .stochvol import (
    CallSpec,
    EquityPaths,
    HestonModel,
    bs_call_price,
    filtered_option_price,
    heston_filter,
    realized_qv,
    simulate_heston,
    vol_recovery,
)
