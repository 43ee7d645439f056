"""Small (mu/mu_w, lambda)-CMA-ES for maximizing a batched score on [0, 1]^D.

Follows the standard tutorial update: weighted recombination, cumulative
step-size adaptation, rank-one plus rank-mu covariance update. Candidates
leaving the cube are scored at their clamped position minus a quadratic
penalty; the reported best is always an in-bounds point with its true score.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

PENALTY = 1e3


def default_popsize(dim: int) -> int:
    return 4 + int(3 * math.log(dim))


def cma_es(start, sigma0: float, score: Callable[[np.ndarray], np.ndarray], budget: int,
           rng: np.random.Generator, popsize: int | None = None):
    """Return ``(best_u, best_score)`` after at most ``budget`` candidate evaluations.

    ``start`` is scored once in addition to the budget so the result never
    falls below it.
    """
    m = np.clip(np.asarray(start, dtype=float).ravel(), 0.0, 1.0)
    n = m.size
    lam = popsize or default_popsize(n)
    mu = lam // 2
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / np.sum(w**2)

    cs = (mueff + 2) / (n + mueff + 5)
    ds = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n**2))

    sigma = float(sigma0)
    C = np.eye(n)
    B = np.eye(n)
    Dg = np.ones(n)
    ps = np.zeros(n)
    pc = np.zeros(n)

    best_u = m.copy()
    best_f = float(score(m[None, :])[0])
    evals = 0
    gen = 0
    while evals + lam <= max(budget, lam):
        z = rng.standard_normal((lam, n))
        y = (z * Dg) @ B.T
        x = m + sigma * y
        xc = np.clip(x, 0.0, 1.0)
        raw = np.asarray(score(xc), dtype=float)
        evals += lam
        gen += 1
        i = int(np.argmax(raw))
        if raw[i] > best_f:
            best_f, best_u = float(raw[i]), xc[i].copy()
        fit = raw - PENALTY * np.sum((x - xc) ** 2, axis=1)

        order = np.argsort(-fit, kind="stable")[:mu]
        y_sel = y[order]
        y_w = w @ y_sel
        m = m + sigma * y_w

        invsqrt = B @ np.diag(1.0 / Dg) @ B.T
        ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * (invsqrt @ y_w)
        hsig = (np.linalg.norm(ps) / math.sqrt(1 - (1 - cs) ** (2 * gen)) / chi_n
                < 1.4 + 2 / (n + 1))
        pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * y_w
        rank_mu = (y_sel.T * w) @ y_sel
        C = ((1 - c1 - cmu) * C
             + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * C)
             + cmu * rank_mu)
        sigma *= math.exp((cs / ds) * (np.linalg.norm(ps) / chi_n - 1))

        C = np.triu(C) + np.triu(C, 1).T
        evals_c, B = np.linalg.eigh(C)
        Dg = np.sqrt(np.maximum(evals_c, 1e-20))
        if sigma * Dg.max() < 1e-12 or not np.isfinite(sigma):
            break
    return best_u, best_f
