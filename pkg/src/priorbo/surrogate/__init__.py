"""Probabilistic models of ``p(y | x)`` and of feasibility."""
from __future__ import annotations

import numpy as np

from ..history import TrialHistory
from ..space import SearchSpace
from .forest import FeasibilityFit, RfFit, fit_feasibility, fit_rf
from .gp import GPFitError, GpFit, fit_gp, log_marginal_likelihood

__all__ = [
    "FeasibilityFit", "GPFitError", "GpFit", "RfFit", "fit_feasibility", "fit_gp",
    "fit_rf", "fit_surrogate", "fit_feasibility_from_history", "log_marginal_likelihood",
    "default_kind",
]


def default_kind(space: SearchSpace) -> str:
    return "gp" if space.is_continuous else "rf"


def fit_surrogate(history: TrialHistory, kind: str, rng: np.random.Generator, **kw):
    """Fit on feasible rows only; infeasible rows only feed the classifier."""
    X, y = history.feasible_data()
    if len(y) < 2:
        raise ValueError("need at least 2 feasible observations to fit a surrogate")
    if kind == "gp":
        if not history.space.is_continuous:
            raise ValueError("GP surrogate needs a fully continuous space")
        return fit_gp(X, y, rng, **kw)
    if kind == "rf":
        return fit_rf(X, y, rng, **kw)
    raise ValueError(f"unknown surrogate kind {kind!r}")


def fit_feasibility_from_history(history: TrialHistory, rng: np.random.Generator) -> FeasibilityFit:
    return fit_feasibility(history.U, history.feasible_mask, rng)
