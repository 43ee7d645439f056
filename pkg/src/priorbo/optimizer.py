"""Acquisition maximization: multi-start local search, CMA-ES and random interleaving."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .cmaes import cma_es
from .history import TrialHistory
from .space import Ordinal, SearchSpace


@dataclass(frozen=True)
class LocalSearchConfig:
    n_best_history: int = 10
    n_best_uniform: int = 10
    n_best_prior: int = 10
    pool_uniform: int = 10_000
    pool_prior: int = 10_000
    neighbors_per_point: int = 4
    neighbor_sigma: float = 0.1
    include_prior_mode: bool = True
    max_stall_rounds: int = 50
    max_evals_per_start: int = 500


@dataclass(frozen=True)
class CmaConfig:
    sigma0: float = 0.2
    budget: int = 300
    enabled: bool = True


@dataclass(frozen=True)
class OptimizerConfig:
    local: LocalSearchConfig = LocalSearchConfig()
    cma: CmaConfig = CmaConfig()
    interleave_prob: float = 0.1


@dataclass(frozen=True)
class Proposal:
    u: np.ndarray
    phase: str          # "bo" or "interleave"
    score: float


def _truncated_normal(center: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Elementwise N(center, sigma^2) truncated to [0, 1], by rejection."""
    out = center + sigma * rng.standard_normal(center.shape)
    bad = (out < 0) | (out > 1)
    while bad.any():
        out[bad] = center[bad] + sigma * rng.standard_normal(int(bad.sum()))
        bad = (out < 0) | (out > 1)
    return out


def neighbors(space: SearchSpace, U: np.ndarray, k: int, sigma: float,
              rng: np.random.Generator) -> np.ndarray:
    """``k`` random neighbours of each row of ``U``; returns ``(len(U), k, D)``.

    Continuous coordinates get a truncated-Gaussian step. A discrete
    coordinate changes with the probability that a Gaussian step of the same
    width would land on another grid value; ordinals then move one rank,
    categoricals jump to a uniformly chosen other value.
    """
    S, D = U.shape
    base = np.repeat(U[:, None, :], k, axis=1).reshape(-1, D)
    out = base.copy()
    changed = np.zeros(base.shape[0], dtype=bool)
    disc_cols = []
    for j, p in enumerate(space.parameters):
        if not p.is_discrete:
            out[:, j] = _truncated_normal(base[:, j], sigma, rng)
            changed[:] = True
            continue
        disc_cols.append(j)
        m = p.size - 1
        p_move = 2.0 * (1.0 - ndtr(0.5 / (m * sigma)))
        move = rng.random(base.shape[0]) < p_move
        out[move, j] = _discrete_step(p, base[move, j], rng)
        changed |= move
    if disc_cols and not changed.all():
        # every neighbour must differ from its centre in at least one coordinate
        idx = np.flatnonzero(~changed)
        cols = np.asarray(disc_cols)[rng.integers(0, len(disc_cols), size=idx.size)]
        for i, j in zip(idx, cols):
            out[i, j] = _discrete_step(space.parameters[j], base[i:i + 1, j], rng)[0]
    return out.reshape(S, k, D)


def _discrete_step(p, u: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    m = p.size - 1
    idx = np.rint(u * m).astype(int)
    if isinstance(p, Ordinal):
        step = np.where(rng.random(idx.size) < 0.5, -1, 1)
        new = idx + step
        new = np.where((new < 0) | (new > m), idx - step, new)
    else:
        # uniform over the other values
        new = rng.integers(0, m, size=idx.size)
        new = np.where(new >= idx, new + 1, new)
    return new / m


def local_search_batch(space: SearchSpace, starts: np.ndarray,
                       score: Callable[[np.ndarray], np.ndarray],
                       cfg: LocalSearchConfig, rng: np.random.Generator):
    """Run hill-climbing from every row of ``starts`` in lockstep.

    Returns the final points and their scores. A start stops after
    ``max_stall_rounds`` rounds without improvement or once it has used
    ``max_evals_per_start`` score evaluations.
    """
    cur = space.snap(np.atleast_2d(starts))
    cur_f = np.asarray(score(cur), dtype=float)
    S = cur.shape[0]
    k = cfg.neighbors_per_point
    stall = np.zeros(S, dtype=int)
    evals = np.zeros(S, dtype=int)
    active = np.ones(S, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        nb = neighbors(space, cur[idx], k, cfg.neighbor_sigma, rng)
        nb = space.snap(nb)
        f = np.asarray(score(nb.reshape(-1, space.dim)), dtype=float).reshape(len(idx), k)
        evals[idx] += k
        j = np.argmax(f, axis=1)
        best_f = f[np.arange(len(idx)), j]
        better = best_f > cur_f[idx]
        up = idx[better]
        cur[up] = nb[better, j[better]]
        cur_f[up] = best_f[better]
        stall[up] = 0
        stall[idx[~better]] += 1
        active = (stall < cfg.max_stall_rounds) & (evals + k <= cfg.max_evals_per_start)
    return cur, cur_f


def local_search(space: SearchSpace, start, score, cfg: LocalSearchConfig,
                 rng: np.random.Generator) -> np.ndarray:
    u, _ = local_search_batch(space, np.atleast_2d(start), score, cfg, rng)
    return u[0]


def _top(U: np.ndarray, f: np.ndarray, n: int) -> np.ndarray:
    order = np.argsort(-f, kind="stable")
    return U[order[:n]]


def propose(space: SearchSpace, ctx, history: TrialHistory, cfg: OptimizerConfig,
            rng: np.random.Generator) -> Proposal:
    """Pick the next point to evaluate.

    With probability ``interleave_prob`` this is a uniform random point.
    Otherwise it is the best-scoring point among local-search results,
    CMA-ES results (continuous spaces) and all pool samples, skipping
    points that were already evaluated.
    """
    if rng.random() < cfg.interleave_prob:
        for _ in range(100):
            u = space.uniform_sample_unit(1, rng)[0]
            if not history.contains_unit(u):
                break
        return Proposal(u, "interleave", float("nan"))

    lc = cfg.local
    prior = ctx.prior
    pool_u = space.uniform_sample_unit(lc.pool_uniform, rng)
    pool_p = prior.sample_unit(lc.pool_prior, rng)
    hist_U = history.U
    ref = np.vstack([pool_u, pool_p, hist_U]) if len(hist_U) else np.vstack([pool_u, pool_p])
    score = ctx.scorer(ref)

    f_u = score(pool_u)
    f_p = score(pool_p)
    starts = []
    if len(history):
        X, y = history.feasible_data()
        if len(y):
            starts.append(X[np.argsort(y, kind="stable")[:lc.n_best_history]])
    starts.append(_top(pool_u, f_u, lc.n_best_uniform))
    starts.append(_top(pool_p, f_p, lc.n_best_prior))
    mode_u = prior.mode_unit()
    if lc.include_prior_mode:
        starts.append(mode_u[None, :])
    starts = np.vstack(starts)
    ls_u, ls_f = local_search_batch(space, starts, score, lc, rng)

    cands = [ls_u]
    cand_f = [ls_f]
    if cfg.cma.enabled and space.is_continuous:
        inc = history.incumbent()
        for s in ([inc.u] if inc is not None else []) + [mode_u]:
            u, f = cma_es(s, cfg.cma.sigma0, score, cfg.cma.budget, rng)
            cands.append(u[None, :])
            cand_f.append(np.array([f]))
    cands += [pool_u, pool_p]
    cand_f += [f_u, f_p]
    U = space.snap(np.vstack(cands))
    F = np.concatenate(cand_f)

    for i in np.argsort(-F, kind="stable"):
        if not history.contains_unit(U[i]):
            return Proposal(U[i], "bo", float(F[i]))
    for _ in range(1000):
        u = space.uniform_sample_unit(1, rng)[0]
        if not history.contains_unit(u):
            return Proposal(u, "bo", float(score(u[None, :])[0]))
    i = int(np.argmax(F))
    return Proposal(U[i], "bo", float(F[i]))
