"""The optimization loop: DoE from the prior, then fit / score / propose / evaluate."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from .acquisition import AcquisitionContext, threshold
from .history import TrialHistory
from .optimizer import OptimizerConfig, propose
from .space import SearchSpace
from .surrogate import GPFitError, default_kind, fit_feasibility_from_history, fit_surrogate

log = logging.getLogger(__name__)


class RunAborted(RuntimeError):
    """The run stopped early; ``trace`` holds everything evaluated so far."""

    def __init__(self, message: str, trace: "RunTrace"):
        super().__init__(message)
        self.trace = trace


class ObjectiveAbort(RuntimeError):
    """Raised by an objective to stop the run instead of recording a failure."""


@dataclass(frozen=True)
class RunConfig:
    budget: int = 20
    doe_count: int | None = None       # None -> D + 1
    beta: float = 10.0
    gamma: float = 0.05
    surrogate: str | None = None       # None -> gp for continuous spaces, rf otherwise
    constrained: bool = False
    interleave_prob: float = 0.1
    seed: int = 0
    optimizer: OptimizerConfig = OptimizerConfig()
    gp_restarts: int = 8

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.doe_count is not None and self.doe_count < 1:
            raise ValueError("doe_count must be >= 1")


@dataclass
class TraceRow:
    iteration: int          # 1-based evaluation counter
    phase: str              # doe | bo | interleave | prior
    x: dict[str, Any]
    u: np.ndarray
    y: float
    feasible: bool
    incumbent: float        # best feasible y so far, nan before the first feasible one
    elapsed_s: float
    objective_s: float = 0.0


@dataclass
class RunTrace:
    space: SearchSpace
    rows: list[TraceRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    @property
    def incumbents(self) -> np.ndarray:
        return np.array([r.incumbent for r in self.rows], dtype=float)

    @property
    def proposals(self) -> np.ndarray:
        return np.array([r.u for r in self.rows])

    def best(self) -> TraceRow | None:
        feas = [r for r in self.rows if r.feasible]
        return min(feas, key=lambda r: r.y) if feas else None

    def write_csv(self, path) -> None:
        names = self.space.names
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "phase", *names, "y", "feasible", "incumbent", "elapsed_s"])
            for r in self.rows:
                w.writerow([r.iteration, r.phase, *[_fmt(r.x[n]) for n in names], _fmt(r.y),
                            int(r.feasible), _fmt(r.incumbent), f"{r.elapsed_s:.6f}"])


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "nan"
    return v


def _call_objective(objective, x, strict: bool):
    try:
        out = objective(x)
    except ObjectiveAbort:
        raise
    except Exception as exc:  # noqa: BLE001 - any user failure becomes an infeasible row
        if strict:
            raise ObjectiveAbort(str(exc)) from exc
        log.warning("objective failed at %s: %s", x, exc)
        return float("nan"), False
    if isinstance(out, dict):
        return float(out["y"]), bool(out.get("feasible", True))
    if isinstance(out, tuple):
        return float(out[0]), bool(out[1])
    return float(out), True


class _Recorder:
    def __init__(self, space, history, objective, strict):
        self.trace = RunTrace(space)
        self.history = history
        self.objective = objective
        self.strict = strict
        self.start = time.perf_counter()
        self.best = math.inf

    def evaluate(self, u, phase):
        x = self.history.space.denormalize(u)
        t0 = time.perf_counter()
        try:
            y, feasible = _call_objective(self.objective, x, self.strict)
        except ObjectiveAbort as exc:
            raise RunAborted(f"objective failed: {exc}", self.trace) from exc
        t1 = time.perf_counter()
        trial = self.history.add(x, y, feasible)
        if trial.feasible and trial.y < self.best:
            self.best = trial.y
        self.trace.rows.append(TraceRow(
            len(self.trace.rows) + 1, phase, trial.x, trial.u, trial.y, trial.feasible,
            self.best if math.isfinite(self.best) else float("nan"),
            t1 - self.start, t1 - t0))
        return trial


def build_context(history: TrialHistory, prior, t: float, config: RunConfig,
                  rng: np.random.Generator) -> AcquisitionContext:
    """Fit the surrogate (and classifier) on ``history`` and bundle the iteration state."""
    kind = config.surrogate or default_kind(history.space)
    _, y = history.feasible_data()
    model = None
    f_gamma = 0.0
    if len(y) >= 1:
        f_gamma = threshold(y, config.gamma)
    if len(y) >= 2:
        kw = {"n_restarts": config.gp_restarts} if kind == "gp" else {}
        model = fit_surrogate(history, kind, rng, **kw)
    feas = fit_feasibility_from_history(history, rng) if config.constrained else None
    return AcquisitionContext(prior, model, t, config.beta, config.gamma, f_gamma, feas)


def _sample_doe(space, prior, n, history, rng):
    out = []
    for _ in range(n):
        for _attempt in range(100):
            u = prior.sample_unit(1, rng)[0]
            dup = history.contains_unit(u) or any(np.array_equal(u, v) for v in out)
            if not dup:
                break
        out.append(u)
    return out


def run(space: SearchSpace, prior, objective: Callable, config: RunConfig,
        callback: Callable | None = None, strict: bool = False) -> RunTrace:
    """Run the prior-guided BO loop and return the evaluation trace.

    ``objective(x)`` receives a native point dict and returns ``y``,
    ``(y, feasible)`` or ``{"y": ..., "feasible": ...}``. Exceptions are
    recorded as infeasible NaN rows unless ``strict`` is set, in which case
    :class:`RunAborted` is raised with the partial trace.

    ``callback(t_done, history)`` is invoked after the DoE (``t_done=0``)
    and after every BO iteration.
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    history = TrialHistory(space)
    rec = _Recorder(space, history, objective, strict)
    doe_count = config.doe_count or space.dim + 1
    opt_cfg = replace(config.optimizer, interleave_prob=config.interleave_prob)

    for u in _sample_doe(space, prior, doe_count, history, rng):
        rec.evaluate(u, "doe")
    if callback is not None:
        callback(0, history)

    for t in range(1, config.budget + 1):
        try:
            ctx = build_context(history, prior, t, config, rng)
        except GPFitError as exc:
            raise RunAborted(f"surrogate fit failed at iteration {t}: {exc}", rec.trace) from exc
        prop = propose(space, ctx, history, opt_cfg, rng)
        rec.evaluate(prop.u, prop.phase)
        if callback is not None:
            callback(t, history)
    return rec.trace


def run_prior_sampling(space: SearchSpace, prior, objective: Callable, n_evals: int,
                       seed: int = 0) -> RunTrace:
    """Baseline that draws every evaluation from the prior."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    history = TrialHistory(space)
    rec = _Recorder(space, history, objective, strict=False)
    for u in prior.sample_unit(n_evals, rng):
        rec.evaluate(u, "prior")
    return rec.trace


def diagnostics_grid(space: SearchSpace, ctx: AcquisitionContext, grid_n: int) -> dict[str, np.ndarray]:
    """Prior, model, log pseudo-posteriors and EI on a regular grid (1D or 2D spaces)."""
    if space.dim > 2:
        raise ValueError("diagnostics grid supports at most 2 dimensions")
    axes = [np.linspace(0, 1, grid_n) for _ in range(space.dim)]
    U = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, space.dim)
    U = space.snap(U)
    log_g, log_b = ctx.log_pseudo_posteriors(U)
    out = {}
    for j, p in enumerate(space.parameters):
        out[p.name] = np.array([p.from_unit(v) for v in U[:, j]], dtype=object)
    out["prior"] = ctx.prior.density_good(U)
    out["model"] = ctx.model_good(U)
    out["log_g"] = log_g
    out["log_b"] = log_b
    out["ei"] = ctx.ei_ratio(U)
    return out
