"""Pseudo-posteriors over good/bad points and the TPE-form EI ratio.

All functions here take candidate batches as ``(N, D)`` arrays in unit
coordinates and return length-``N`` arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr

EPS = 1e-12
SIGMA_FLOOR = 1e-6
EXP_CLIP = 500.0


class EmptyHistoryError(RuntimeError):
    pass


def threshold(y: Sequence[float], gamma: float) -> float:
    """Lower empirical ``gamma``-quantile: the ``ceil(gamma * t)``-th smallest value."""
    ys = np.sort(np.asarray(y, dtype=float))
    ys = ys[np.isfinite(ys)]
    if ys.size == 0:
        raise EmptyHistoryError("threshold needs at least one feasible observation")
    k = math.ceil(gamma * ys.size - 1e-9) - 1
    return float(ys[min(max(k, 0), ys.size - 1)])


def probability_good(mu, sigma, f_gamma) -> np.ndarray:
    """``Phi((f_gamma - mu) / sigma)`` clamped to ``[EPS, 1 - EPS]``."""
    sigma = np.maximum(np.asarray(sigma, dtype=float), SIGMA_FLOOR)
    z = (f_gamma - np.asarray(mu, dtype=float)) / sigma
    return np.clip(ndtr(z), EPS, 1.0 - EPS)


def log_probability_good(mu, sigma, f_gamma) -> tuple[np.ndarray, np.ndarray]:
    """``(log M_g, log M_b)`` from exact Gaussian log-tails.

    Unlike logs of the clamped probabilities these keep their ordering far
    into the tails, so confidently-good candidates do not all tie.
    """
    sigma = np.maximum(np.asarray(sigma, dtype=float), SIGMA_FLOOR)
    z = (f_gamma - np.asarray(mu, dtype=float)) / sigma
    return log_ndtr(z), log_ndtr(-z)


def ei_ratio_from_logs(log_g, log_b, gamma: float) -> np.ndarray:
    """``(gamma + (1 - gamma) * b / g) ** -1`` with the exponent clamped."""
    delta = np.clip(np.asarray(log_b, dtype=float) - np.asarray(log_g, dtype=float),
                    -EXP_CLIP, EXP_CLIP)
    return 1.0 / (gamma + (1.0 - gamma) * np.exp(delta))


def ei_excess_from_logs(log_g, log_b, gamma: float) -> np.ndarray:
    """``ei_ratio - 1 / gamma`` computed without cancellation.

    Near saturation the ratio itself is ``1/gamma`` to machine precision,
    which would flatten any min-max normalization built on it.
    """
    delta = np.clip(np.asarray(log_b, dtype=float) - np.asarray(log_g, dtype=float),
                    -EXP_CLIP, EXP_CLIP)
    e = np.exp(delta)
    return -(1.0 - gamma) * e / (gamma * (gamma + (1.0 - gamma) * e))


def minmax_normalize(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi - lo <= 0:
        return np.ones_like(v)
    return (v - lo) / (hi - lo)


def constrained_ei(ei_values, feasible_prob) -> np.ndarray:
    """Min-max normalize EI over the batch, then weight by feasibility."""
    return minmax_normalize(ei_values) * np.asarray(feasible_prob, dtype=float)


def ei_exact_discrete(g: float, b: float, gamma: float, f_gamma: float,
                      y_values, y_probs) -> float:
    """Exact EI of the ``p(x|y)`` density model for a discrete ``p(y)``.

    Test oracle for the ratio form; not used by the optimizer.
    """
    y = np.asarray(y_values, dtype=float)
    p = np.asarray(y_probs, dtype=float)
    if y.shape != p.shape or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("y_probs must be a pmf over y_values summing to 1")
    improvement = np.sum(np.maximum(f_gamma - y, 0.0) * p)
    return float(g * improvement / (gamma * g + (1.0 - gamma) * b))


@dataclass
class AcquisitionContext:
    """Everything needed to score candidates at one BO iteration.

    ``model`` is any fitted object with ``predict(U) -> (mu, sigma)``; with
    ``model=None`` the model term is the uninformative constant 0.5.
    """

    prior: Any
    model: Any
    t: float
    beta: float = 10.0
    gamma: float = 0.05
    f_gamma: float = 0.0
    feasibility: Any = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.t < 0:
            raise ValueError("t must be non-negative")

    @property
    def weight(self) -> float:
        return self.t / self.beta

    def model_good(self, U) -> np.ndarray:
        U = np.atleast_2d(U)
        if self.model is None:
            return np.full(U.shape[0], 0.5)
        mu, sigma = self.model.predict(U)
        return probability_good(mu, sigma, self.f_gamma)

    def log_pseudo_posteriors(self, U) -> tuple[np.ndarray, np.ndarray]:
        U = np.atleast_2d(U)
        log_pg, log_pb = self.prior.log_densities(U)
        if self.weight == 0:
            return log_pg, log_pb
        if self.model is None:
            log_mg = log_mb = np.full(U.shape[0], math.log(0.5))
        else:
            log_mg, log_mb = log_probability_good(*self.model.predict(U), self.f_gamma)
        return log_pg + self.weight * log_mg, log_pb + self.weight * log_mb

    def ei_ratio(self, U) -> np.ndarray:
        return ei_ratio_from_logs(*self.log_pseudo_posteriors(U), self.gamma)

    def log_ratio(self, U) -> np.ndarray:
        """``log g - log b``; strictly increasing map to the EI ratio."""
        lg, lb = self.log_pseudo_posteriors(U)
        return lg - lb

    def feasible_prob(self, U) -> np.ndarray:
        U = np.atleast_2d(U)
        if self.feasibility is None:
            return np.ones(U.shape[0])
        return self.feasibility.feasible_prob(U)

    def constrained_ei(self, U) -> np.ndarray:
        """Batch-normalized EI times feasibility; plain EI when unconstrained."""
        if self.feasibility is None:
            return self.ei_ratio(U)
        lg, lb = self.log_pseudo_posteriors(U)
        return minmax_normalize(ei_excess_from_logs(lg, lb, self.gamma)) * self.feasible_prob(U)

    def scorer(self, reference_U=None):
        """Score function used by the acquisition optimizer.

        Unconstrained: ``log g - log b`` (same argmax as the EI ratio, better
        resolution near saturation). Constrained: EI normalized with the
        min/max over ``reference_U`` (the batch of the current round), then
        multiplied by the feasibility probability.
        """
        if self.feasibility is None:
            return self.log_ratio
        ref = ei_excess_from_logs(*self.log_pseudo_posteriors(reference_U), self.gamma)
        lo, hi = float(ref.min()), float(ref.max())
        span = hi - lo

        def score(U):
            ex = ei_excess_from_logs(*self.log_pseudo_posteriors(U), self.gamma)
            norm = np.ones_like(ex) if span <= 0 else np.maximum((ex - lo) / span, 0.0)
            return norm * self.feasible_prob(U)

        return score
