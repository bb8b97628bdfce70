"""Empirical Bayes deconvolution: NPMLE of mixing distributions, compound
decision rules, and heterogeneous panel income dynamics."""

from .kernels import (
    Binomial,
    DiscreteDistribution,
    GammaScale,
    GaussianLocation,
    Grid,
    LikelihoodMatrix,
    Poisson,
    StudentTLocation,
    UnsupportedObservationError,
    build_grid,
    build_likelihood_matrix,
    kernel_density,
    log_grid,
    marginal_density,
)
from .npmle import NpmleSolution, SolverConfig, kkt_residual, solve_npmle
from .panel import (
    PanelDataset,
    ProfileCurve,
    SufficientStats,
    fit_bivariate_heterogeneity,
    fit_independent_heterogeneity,
    profile_loglik,
    sufficient_stats,
    wilks_interval,
)
from .statespace import (
    ArmaParams,
    StateSpaceSystem,
    arma_loglik_trajectory,
    build_arma_likelihood_matrix,
    fit_arma_profile,
)
from .predict import (
    FanBands,
    PredictionEnsemble,
    UnitPosterior,
    increment_density_table,
    quantile_bands,
    simulate_paths,
    uniform_band,
    unit_posterior,
)

__version__ = "0.1.0"
