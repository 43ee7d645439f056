"""Bayesian optimization with a user prior over the location of the optimum."""
from .acquisition import AcquisitionContext, ei_exact_discrete, threshold
from .engine import RunConfig, RunTrace, diagnostics_grid, run, run_prior_sampling
from .history import TrialHistory
from .priors import (FactorizedPrior, JointKdePrior, build_kde_prior, build_misleading_prior,
                     build_synthetic_prior)
from .space import Categorical, Continuous, Ordinal, SearchSpace

__version__ = "0.1.0"
