"""Asymptotic theory and finite-size validation for classification of
Gaussian scale-mixture data clouds."""

from .losses import LossKind, ProxResult, logistic_curvature, loss, prox
from .metrics import (
    ErrorReport,
    bayes_optimal_error,
    generalisation_error,
    rl_mse,
    rl_training_loss,
    training_metrics,
)
from .separability import SeparabilityResult, alpha_star, s_integral
from .state_evolution import (
    CentroidGeometry,
    OrderParams,
    ProblemSpec,
    SEResult,
    SolverConfig,
    se_update_general,
    se_update_ridge_square,
    solve_rl_square,
    solve_se,
)
from .variance import (
    Contaminated,
    Expectation,
    InverseGamma,
    MomentConditionError,
    MomentReport,
    MonteCarlo,
    PointMass,
    Quadrature,
    VarianceModel,
    delta_k,
    density,
    expect,
    moments,
    sample,
    unit_covariance_family,
)

__version__ = "0.1.0"
