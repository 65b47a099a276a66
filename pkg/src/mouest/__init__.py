"""Multivariate Ornstein-Uhlenbeck network estimation."""
from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateInputError,
    DomainError,
    FormatError,
    MOUError,
    NumericalError,
    ShapeError,
    SingularMatrixError,
    StabilityError,
)
from .estimators import (
    Estimate,
    LyapunovFitConfig,
    accuracy,
    bayesian_estimate,
    lyapunov_fit,
    moments_estimate,
    sigma_from_estimate,
)
from .matfun import imag_real_ratio, mat_exp, mat_log, pearson, solve_lyapunov
from .model import (
    ModelParams,
    MomentPair,
    conditional_cov,
    jacobian,
    log_posterior,
    model_cov,
    model_lagged_cov,
    propagator,
    theoretical_moments,
)
from .synth import (
    NetworkConfig,
    TimeSeries,
    draw_params,
    empirical_moments,
    gen_connectivity,
    gen_sigma,
    simulate,
    transition_moments,
)

__version__ = "0.1.0"
