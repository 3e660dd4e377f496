"""Gaussian process emulators with hyper-parameters sampled by annealed importance sampling."""

__version__ = "0.1.0"

from .gp import (
    NUGGET_LOWER,
    GpFactorization,
    HyperParams,
    IllConditionedCovarianceError,
    InvalidArgumentError,
    SingularDesignError,
    TrainingSet,
    correlation,
    factorize,
    gls_estimates,
    neg_log_posterior,
    predictive_moments,
)
from .transforms import (
    LogNormalPrior,
    from_unconstrained,
    log_prior_flat,
    meta_prior_sample,
    parse_prior,
    to_unconstrained,
)
from .aims import SamplerConfig, SamplerResult, anneal, run
from .mixture import MixtureEmulator, map_component, mixture_cov, mixture_mean, rmse, standardized_residuals
from .testbed import branin_modified, builtin_dataset, latin_hypercube, load_dataset, model_2d

__all__ = [name for name in dir() if not name.startswith("_")]
