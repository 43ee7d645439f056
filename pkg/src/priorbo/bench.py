"""Closed-form benchmark objectives and regret bookkeeping."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .engine import RunConfig, RunTrace, run, run_prior_sampling
from .priors import (FactorizedPrior, build_kde_prior, build_misleading_prior,
                     build_synthetic_prior, prior_from_space_dict)
from .space import Continuous, DomainError, SearchSpace

LOG_FLOOR = 1e-12

_A = 1.0
_B = 5.1 / (4 * math.pi**2)
_C = 5.0 / math.pi
_R = 6.0
_S = 10.0
_T = 1.0 / (8 * math.pi)

BRANIN_MIN = 0.397887357729738


def branin_batch(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x1, x2 = X[:, 0], X[:, 1]
    return _A * (x2 - _B * x1**2 + _C * x1 - _R) ** 2 + _S * (1 - _T) * np.cos(x1) + _S


def _check(name, v, lo, hi):
    if not lo <= v <= hi:
        raise DomainError(f"{name}={v} outside [{lo}, {hi}]")


def branin(x1: float, x2: float) -> float:
    _check("x1", x1, -5.0, 10.0)
    _check("x2", x2, 0.0, 15.0)
    return float(branin_batch([[x1, x2]])[0])


BRANIN1D_X2 = 2.275


def branin1d(x1: float) -> float:
    _check("x1", x1, -5.0, 10.0)
    return float(branin_batch([[x1, BRANIN1D_X2]])[0])


CONSTRAINT_X2_MAX = 10.0


def constrained_branin(x1: float, x2: float) -> tuple[float, bool]:
    """Branin with the feasible region ``x2 <= 10`` (drops the optimum at (-pi, 12.275))."""
    return branin(x1, x2), bool(x2 <= CONSTRAINT_X2_MAX)


def six_hump_camel_batch(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x, y = X[:, 0], X[:, 1]
    return (4 - 2.1 * x**2 + x**4 / 3) * x**2 + x * y + (-4 + 4 * y**2) * y**2


@dataclass(frozen=True)
class Benchmark:
    name: str
    space: SearchSpace
    batch: Callable[[np.ndarray], np.ndarray]
    optima: tuple
    optimum_value: float
    feasibility: Callable[[np.ndarray], np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    def __call__(self, x: dict[str, Any]):
        vals = [float(x[n]) for n in self.space.names]
        for p, v in zip(self.space.parameters, vals):
            _check(p.name, v, p.lo, p.hi)
        y = float(self.batch(np.array([vals]))[0])
        if self.feasibility is None:
            return y
        return y, bool(self.feasibility(np.array([vals]))[0])

    def optimum_point(self, i: int = 0) -> dict[str, float]:
        return dict(zip(self.space.names, self.optima[i]))


def _branin_space():
    return SearchSpace((Continuous("x1", -5.0, 10.0), Continuous("x2", 0.0, 15.0)))


BENCHMARKS: dict[str, Benchmark] = {
    "branin": Benchmark("branin", _branin_space(), branin_batch,
                        tuple((a, b) for a, b in ((math.pi, 2.275), (-math.pi, 12.275),
                                                  (9.42478, 2.475))), BRANIN_MIN),
    "branin1d": Benchmark(
        "branin1d", SearchSpace((Continuous("x1", -5.0, 10.0),)),
        lambda X: branin_batch(np.column_stack([np.atleast_2d(X)[:, 0],
                                                np.full(len(np.atleast_2d(X)), BRANIN1D_X2)])),
        ((math.pi,),), BRANIN_MIN),
    "constrained_branin": Benchmark(
        "constrained_branin", _branin_space(), branin_batch,
        ((math.pi, 2.275), (9.42478, 2.475)), BRANIN_MIN,
        feasibility=lambda X: np.atleast_2d(X)[:, 1] <= CONSTRAINT_X2_MAX),
    "six_hump_camel": Benchmark(
        "six_hump_camel", SearchSpace((Continuous("x1", -3.0, 3.0), Continuous("x2", -2.0, 2.0))),
        six_hump_camel_batch, ((0.0898, -0.7126), (-0.0898, 0.7126)), -1.031628453489877),
}


def get_benchmark(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None


def regret(incumbents, optimum_value: float) -> np.ndarray:
    """Simple regret per evaluation; nan where no feasible point exists yet."""
    return np.asarray(incumbents, dtype=float) - optimum_value


def log_regret(incumbents, optimum_value: float) -> np.ndarray:
    r = regret(incumbents, optimum_value)
    with np.errstate(invalid="ignore"):
        return np.log10(np.where(np.isnan(r), np.nan, np.maximum(r, LOG_FLOOR)))


def aggregate_log_regret(series: list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, population std and seed count of log regret per iteration.

    Series may differ in length; each row only averages the seeds that reach it.
    """
    n = max(len(s) for s in series)
    M = np.full((len(series), n), np.nan)
    for i, s in enumerate(series):
        M[i, :len(s)] = s
    count = np.sum(~np.isnan(M), axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(M, axis=0)
        std = np.nanstd(M, axis=0)
    return mean, std, count


# ---------------------------------------------------------------------------
# experiment recipes
# ---------------------------------------------------------------------------

DEFAULT_SEEDS = 5


@dataclass(frozen=True)
class RunSpec:
    """One fully determined run: what to optimize, with which prior and config."""

    group: str
    benchmark: str
    prior: dict
    config: RunConfig
    seed_index: int
    master_seed: int = 0
    method: str = "bo"                      # bo | prior_sampling
    diag_iters: tuple = ()
    diag_grid: int = 501

    @property
    def n_evals(self) -> int:
        doe = self.config.doe_count or get_benchmark(self.benchmark).space.dim + 1
        return doe + self.config.budget

    def prior_rng(self) -> np.random.Generator:
        # separate stream from the run itself so prior draws never shift proposals
        return np.random.default_rng(np.random.SeedSequence(self.master_seed,
                                                            spawn_key=(self.seed_index, 1)))

    def to_dict(self) -> dict:
        cfg = {k: getattr(self.config, k) for k in
               ("budget", "doe_count", "beta", "gamma", "surrogate", "constrained",
                "interleave_prob", "seed")}
        return {"group": self.group, "benchmark": self.benchmark, "prior": self.prior,
                "method": self.method, "seed_index": self.seed_index,
                "master_seed": self.master_seed, "config": cfg}


def run_seed(master_seed: int, index: int) -> int:
    """Counter-based per-run seed: adding runs never changes earlier ones."""
    return int(np.random.SeedSequence(master_seed, spawn_key=(index,)).generate_state(1)[0])


def build_prior(bench: Benchmark, spec: dict, rng: np.random.Generator):
    """Prior from a recipe/config description.

    ``spec["type"]`` is one of ``uniform``, ``synthetic`` (``sigma_x``),
    ``misleading`` (``n_samples``, ``sigma``), ``kde`` (``dataset_size``,
    ``top_k``, ``multivariate``, ``a``, ``b``) or ``factorized`` (per-parameter
    JSON priors under ``parameters``).
    """
    kind = spec.get("type", "uniform")
    space = bench.space
    if kind == "uniform":
        return FactorizedPrior.uniform(space)
    if kind == "synthetic":
        return build_synthetic_prior(space, bench.optima[int(spec.get("optimum", 0))],
                                     float(spec["sigma_x"]), rng)
    if kind == "misleading":
        return build_misleading_prior(space, bench.batch, rng, spec.get("n_samples"),
                                      float(spec.get("sigma", 0.01)))
    if kind == "kde":
        return build_kde_prior(space, bench.batch, int(spec["dataset_size"]), int(spec["top_k"]),
                               bool(spec.get("multivariate", False)), rng,
                               float(spec.get("a", 100.0)), float(spec.get("b", 0.0)))
    if kind == "factorized":
        return prior_from_space_dict(space, {"parameters": spec["parameters"]})
    raise ValueError(f"unknown prior type {kind!r}")


def spec_prior(spec: RunSpec):
    return build_prior(get_benchmark(spec.benchmark), spec.prior, spec.prior_rng())


def execute(spec: RunSpec, prior=None, callback=None) -> RunTrace:
    """Run ``spec``; ``prior`` may be passed in when the caller already built it."""
    bench = get_benchmark(spec.benchmark)
    prior = spec_prior(spec) if prior is None else prior
    if spec.method == "prior_sampling":
        return run_prior_sampling(bench.space, prior, bench, spec.n_evals, spec.config.seed)
    if spec.method != "bo":
        raise ValueError(f"unknown method {spec.method!r}")
    return run(bench.space, prior, bench, spec.config, callback=callback)


def _expand(groups, n_seeds, master_seed, **common):
    out = []
    for g, (bench, prior, cfg_kw, method) in groups.items():
        for i in range(n_seeds):
            cfg = RunConfig(seed=run_seed(master_seed, i), **cfg_kw)
            out.append(RunSpec(g, bench, prior, cfg, i, master_seed, method, **common))
    return out


def _budget(bench: str, n_evals: int, doe: int | None = None) -> dict:
    dim = get_benchmark(bench).space.dim
    doe = dim + 1 if doe is None else doe
    return {"budget": n_evals - doe, "doe_count": doe}


GAMMAS = (0.01, 0.05, 0.1, 0.2, 0.5)
BETAS = (0.01, 0.1, 1.0, 10.0, 100.0, 1000.0)


def _recipe_groups(name: str, n_evals: int | None):
    strong = {"type": "synthetic", "sigma_x": 0.01}
    if name == "forgetting_1d":
        b = _budget("branin1d", n_evals or 22)
        return {
            "exponential": ("branin1d", {"type": "factorized", "parameters": [
                {"name": "x1", "prior": {"type": "exponential", "direction": "increasing"}}]},
                b, "bo"),
            "beta33": ("branin1d", {"type": "factorized", "parameters": [
                {"name": "x1", "prior": {"type": "beta", "a": 3, "b": 3}}]}, b, "bo"),
        }, {"diag_iters": (0, 5, 10, 20)}
    if name == "strong_weak_prior":
        b = _budget("branin", n_evals or 100)
        return {
            "uniform": ("branin", {"type": "uniform"}, b, "bo"),
            "strong": ("branin", strong, b, "bo"),
            "weak": ("branin", {"type": "synthetic", "sigma_x": 0.1}, b, "bo"),
            "strong_prior_sampling": ("branin", strong, b, "prior_sampling"),
        }, {}
    if name == "misleading":
        b = _budget("branin", n_evals or 100)
        return {
            "misleading": ("branin", {"type": "misleading"}, b, "bo"),
            "uniform": ("branin", {"type": "uniform"}, b, "bo"),
        }, {}
    if name == "kde_sweep":
        b = _budget("branin", n_evals or 100)
        groups = {}
        for label, size in (("strong", 1_000_000), ("weak", 1_000)):
            for mv in (False, True):
                g = f"{label}_{'multivariate' if mv else 'univariate'}"
                groups[g] = ("branin", {"type": "kde", "dataset_size": size * 2, "top_k": 20,
                                        "multivariate": mv}, b, "bo")
        return groups, {}
    if name == "gamma_sweep":
        b = _budget("branin", n_evals or 20)
        return {f"gamma_{g:g}": ("branin", strong, {**b, "gamma": g}, "bo") for g in GAMMAS}, {}
    if name == "beta_sweep":
        b = _budget("branin", n_evals or 20)
        return {f"beta_{v:g}": ("branin", strong, {**b, "beta": v}, "bo") for v in BETAS}, {}
    if name == "constrained_demo":
        b = _budget("constrained_branin", n_evals or 50)
        return {"constrained": ("constrained_branin", {"type": "uniform"},
                                {**b, "constrained": True}, "bo")}, {}
    raise KeyError(f"unknown recipe {name!r}; choose from {list(RECIPES)}")


RECIPES = ("forgetting_1d", "strong_weak_prior", "misleading", "kde_sweep", "gamma_sweep",
           "beta_sweep", "constrained_demo")


def expand_recipe(name: str, n_seeds: int = DEFAULT_SEEDS, master_seed: int = 0,
                  n_evals: int | None = None, groups: tuple | None = None) -> list[RunSpec]:
    """Deterministic list of runs for a named recipe.

    ``n_evals`` overrides the total evaluation count; ``groups`` keeps only
    the named arms.
    """
    table, common = _recipe_groups(name, n_evals)
    if groups is not None:
        unknown = set(groups) - set(table)
        if unknown:
            raise KeyError(f"recipe {name!r} has no groups {sorted(unknown)}")
        table = {g: v for g, v in table.items() if g in groups}
    return _expand(table, n_seeds, master_seed, **common)
