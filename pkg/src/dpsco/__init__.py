"""Differentially private stochastic convex optimisation algorithms and benchmarks."""
from .core import (
    BudgetError,
    ConvergenceError,
    ConvexDomain,
    Dataset,
    LossFamily,
    NonDifferentiableError,
    NumericalError,
    PreconditionError,
    PrivacyBudget,
    RngStream,
    TrialResult,
    project,
    validate_budget,
)
from .losses import (
    SyntheticDistribution,
    euclidean_norm_loss,
    excess_population_loss,
    logistic_glm_loss,
    make_distribution,
    squared_distance_loss,
)
from .nsgd import derive_nsgd_params, run_nsgd
from .objpert import derive_objpert_params, run_objpert_app, run_objpert_exact
from .smoothing import approx_prox, derive_smoothing_params, run_proxgd

__version__ = "0.1.0"
