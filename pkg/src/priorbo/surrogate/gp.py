"""Zero-mean GP with a Matérn-5/2 ARD kernel on standardized targets."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

SQRT5 = math.sqrt(5.0)
JITTERS = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)

LENGTHSCALE_BOUNDS = (1e-3, 10.0)
SIGNAL_BOUNDS = (1e-3, 1e3)
NOISE_BOUNDS = (1e-8, 1e-1)


class GPFitError(RuntimeError):
    pass


def _scaled_sqdist(A, B, lengthscales):
    A = A / lengthscales
    B = B / lengthscales
    d2 = (A**2).sum(1)[:, None] + (B**2).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def matern52(A, B, lengthscales, signal_var):
    r = np.sqrt(_scaled_sqdist(A, B, lengthscales))
    return signal_var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r**2) * np.exp(-SQRT5 * r)


def _cholesky(K):
    n = K.shape[0]
    scale = max(float(np.mean(np.diag(K))), 1e-300)
    for jitter in JITTERS:
        try:
            return np.linalg.cholesky(K + jitter * scale * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    raise GPFitError("kernel matrix not positive definite after jitter escalation")


def log_marginal_likelihood(theta, X, y, with_grad=True):
    """Log marginal likelihood and its gradient w.r.t. ``theta``.

    ``theta = [log l_1..log l_D, log signal_var, log noise_var]``.
    """
    n, d = X.shape
    ls = np.exp(theta[:d])
    sf2 = math.exp(theta[d])
    sn2 = math.exp(theta[d + 1])

    diffs = (X[:, None, :] - X[None, :, :]) / ls          # n x n x d
    sq = diffs**2
    r = np.sqrt(sq.sum(-1))
    e = np.exp(-SQRT5 * r)
    Kf = sf2 * (1.0 + SQRT5 * r + 5.0 / 3.0 * r**2) * e
    K = Kf + sn2 * np.eye(n)
    L = _cholesky(K)
    alpha = cho_solve((L, True), y)
    mll = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi)
    if not with_grad:
        return mll
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n))
    grad = np.empty(d + 2)
    common = sf2 * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e
    for j in range(d):
        grad[j] = 0.5 * np.sum(W * (common * sq[:, :, j]))
    grad[d] = 0.5 * np.sum(W * Kf)
    grad[d + 1] = 0.5 * sn2 * np.trace(W)
    return mll, grad


@dataclass
class GpFit:
    X: np.ndarray
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    y_mean: float
    y_std: float
    L: np.ndarray
    alpha: np.ndarray
    mll: float

    def predict(self, U):
        """Posterior mean and standard deviation of the latent function."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        Ks = matern52(U, self.X, self.lengthscales, self.signal_var)
        mu = Ks @ self.alpha
        v = solve_triangular(self.L, Ks.T, lower=True)
        var = np.maximum(self.signal_var - (v**2).sum(0), 0.0)
        return mu * self.y_std + self.y_mean, np.sqrt(var) * self.y_std


def _theta_bounds(d):
    lb = [LENGTHSCALE_BOUNDS] * d + [SIGNAL_BOUNDS, NOISE_BOUNDS]
    return [(math.log(a), math.log(b)) for a, b in lb]


def fit_gp(X, y, rng: np.random.Generator, n_restarts: int = 8,
           noise_var: float | None = None, maxiter: int = 200) -> GpFit:
    """Fit hyperparameters by multi-start L-BFGS-B on the log marginal likelihood.

    ``X`` is in unit coordinates. Passing ``noise_var`` pins the noise instead
    of learning it.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if n < 2:
        raise GPFitError("GP needs at least 2 observations")
    y_mean = float(y.mean())
    y_std = float(y.std())
    if not y_std > 0:
        y_std = 1.0
    ys = (y - y_mean) / y_std

    bounds = _theta_bounds(d)
    if noise_var is not None:
        fixed = math.log(noise_var)
        bounds[-1] = (fixed, fixed)

    def negative(theta):
        try:
            mll, g = log_marginal_likelihood(theta, X, ys)
        except GPFitError:
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(mll):
            return 1e25, np.zeros_like(theta)
        return -mll, -g

    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    starts = [np.clip(np.r_[np.full(d, math.log(0.3)), 0.0, math.log(1e-4)], lo, hi)]
    starts += [rng.uniform(lo, hi) for _ in range(max(n_restarts, 1) - 1)]

    best = None
    for theta0 in starts:
        res = minimize(negative, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": maxiter})
        if best is None or res.fun < best.fun:
            best = res
    if best is None or best.fun >= 1e25:
        raise GPFitError("no restart produced a finite marginal likelihood")

    theta = best.x
    ls = np.exp(theta[:d])
    sf2 = math.exp(theta[d])
    sn2 = math.exp(theta[d + 1])
    K = matern52(X, X, ls, sf2) + sn2 * np.eye(n)
    L = _cholesky(K)
    alpha = cho_solve((L, True), ys)
    return GpFit(X, ls, sf2, sn2, y_mean, y_std, L, alpha, float(-best.fun))
