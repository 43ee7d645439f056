"""User priors over the location of the optimum.

A prior is a density ``P_g`` over the unit cube. Before it enters the
acquisition function it is min-max scaled to ``[0, 1]`` and complemented
into ``P_b = 1 - P_g``. Per-dimension shapes live in small frozen
dataclasses operating on one unit coordinate; :class:`FactorizedPrior`
multiplies them and owns the scaling cache.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.stats import qmc

from .space import Continuous, Ordinal, SearchSpace

EPS = 1e-12
N_PROBE = 10_000
N_MODE_GRID = 10_001
_BETA_EDGE = 1e-12


class PriorStateError(RuntimeError):
    """Raised when densities are requested before the scale cache exists."""


# ---------------------------------------------------------------------------
# one-dimensional shapes, all on u in [0, 1]
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    def pdf(self, u):
        return np.ones_like(np.asarray(u, dtype=float))

    def sample(self, n, rng):
        return rng.random(n)

    def mode(self):
        return 0.5


@dataclass(frozen=True)
class GaussianTrunc:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("GaussianTrunc needs sigma > 0")

    def _bounds(self):
        return (0.0 - self.mu) / self.sigma, (1.0 - self.mu) / self.sigma

    def pdf(self, u):
        a, b = self._bounds()
        return stats.truncnorm.pdf(np.asarray(u, dtype=float), a, b, loc=self.mu, scale=self.sigma)

    def sample(self, n, rng):
        a, b = self._bounds()
        # plain rejection while the acceptance rate is reasonable, inverse cdf otherwise
        mass = stats.norm.cdf(b) - stats.norm.cdf(a)
        if mass > 0.2:
            out = np.empty(0)
            while out.size < n:
                draw = rng.normal(self.mu, self.sigma, size=int((n - out.size) / mass) + 16)
                out = np.concatenate([out, draw[(draw >= 0.0) & (draw <= 1.0)]])
            return out[:n]
        return stats.truncnorm.rvs(a, b, loc=self.mu, scale=self.sigma, size=n, random_state=rng)

    def mode(self):
        return float(min(1.0, max(0.0, self.mu)))


@dataclass(frozen=True)
class Exponential:
    """Density proportional to ``exp(rate * u)`` (increasing) or ``exp(-rate * u)``."""

    rate: float = 10.0
    direction: str = "decreasing"

    def __post_init__(self):
        if self.direction not in ("increasing", "decreasing"):
            raise ValueError(f"direction must be increasing|decreasing, got {self.direction!r}")
        if not self.rate > 0:
            raise ValueError("Exponential needs rate > 0")

    @property
    def _signed_rate(self):
        return self.rate if self.direction == "increasing" else -self.rate

    def pdf(self, u):
        r = self._signed_rate
        return r * np.exp(r * np.asarray(u, dtype=float)) / math.expm1(r)

    def sample(self, n, rng):
        r = self._signed_rate
        return np.log1p(rng.random(n) * math.expm1(r)) / r

    def mode(self):
        return 1.0 if self.direction == "increasing" else 0.0


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def pdf(self, u):
        # shapes below 1 diverge at the boundary; evaluate just inside it
        u = np.clip(np.asarray(u, dtype=float), _BETA_EDGE, 1.0 - _BETA_EDGE)
        return stats.beta.pdf(u, self.a, self.b)

    def sample(self, n, rng):
        return rng.beta(self.a, self.b, size=n)

    def mode(self):
        if self.a > 1 and self.b > 1:
            return (self.a - 1) / (self.a + self.b - 2)
        return None


@dataclass(frozen=True)
class DiscreteWeights:
    """Probability list over the values of an ordinal or categorical parameter."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 2 or np.any(p < 0):
            raise ValueError("weights must be a list of >= 2 non-negative numbers")
        # hand-typed probability lists rarely sum to exactly one
        if abs(p.sum() - 1.0) > 0.02:
            raise ValueError(f"weights sum to {p.sum():.4f}, expected 1")
        object.__setattr__(self, "probs", tuple(p / p.sum()))

    def _index(self, u):
        k = len(self.probs) - 1
        return np.rint(np.asarray(u, dtype=float) * k).astype(int)

    def pdf(self, u):
        return np.asarray(self.probs)[self._index(u)]

    def sample(self, n, rng):
        k = len(self.probs) - 1
        return rng.choice(k + 1, size=n, p=np.asarray(self.probs)) / k

    def mode(self):
        return int(np.argmax(self.probs)) / (len(self.probs) - 1)


@dataclass(frozen=True)
class KDE:
    """Gaussian kernel density with a fixed kernel width in unit coordinates."""

    centers: tuple[float, ...]
    bandwidth: float

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("KDE needs bandwidth > 0")
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        c = np.asarray(self.centers)
        z = (u[..., None] - c) / self.bandwidth
        return np.exp(-0.5 * z**2).sum(-1) / (len(c) * self.bandwidth * math.sqrt(2 * math.pi))

    def sample(self, n, rng):
        c = np.asarray(self.centers)
        out = np.empty(0)
        while out.size < n:
            m = n - out.size
            draw = c[rng.integers(0, len(c), size=m)] + self.bandwidth * rng.standard_normal(m)
            out = np.concatenate([out, draw[(draw >= 0) & (draw <= 1)]])
        return out[:n]

    def mode(self):
        return None

    def extra_mode_candidates(self):
        return np.clip(np.asarray(self.centers), 0, 1)


@dataclass(frozen=True)
class Mixture:
    components: tuple
    weights: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.components) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")

    def pdf(self, u):
        return sum(w * c.pdf(u) for w, c in zip(self.weights, self.components))

    def sample(self, n, rng):
        which = rng.choice(len(self.components), size=n, p=np.asarray(self.weights))
        out = np.empty(n)
        for i, comp in enumerate(self.components):
            idx = np.flatnonzero(which == i)
            if idx.size:
                out[idx] = comp.sample(idx.size, rng)
        return out

    def mode(self):
        return None

    def extra_mode_candidates(self):
        pts = [c.mode() for c in self.components]
        return np.array([p for p in pts if p is not None], dtype=float)


PriorSpec = Uniform | GaussianTrunc | Exponential | Beta | DiscreteWeights | KDE | Mixture


def _discretize(spec, size: int) -> DiscreteWeights:
    """Turn a continuous shape into a pmf over ``size`` evenly spaced grid values."""
    if isinstance(spec, DiscreteWeights):
        if len(spec.probs) != size:
            raise ValueError(f"got {len(spec.probs)} weights for a parameter with {size} values")
        return spec
    grid = np.linspace(0, 1, size)
    w = np.asarray(spec.pdf(grid), dtype=float)
    if not np.isfinite(w).all() or w.sum() <= 0:
        w = np.ones(size)
    return DiscreteWeights(tuple(w / w.sum()))


def mode_1d(spec) -> float:
    m = spec.mode()
    if m is not None:
        return float(m)
    grid = np.linspace(0, 1, N_MODE_GRID)
    extra = getattr(spec, "extra_mode_candidates", None)
    if extra is not None:
        grid = np.concatenate([grid, extra()])
    dens = spec.pdf(grid)
    return float(grid[int(np.argmax(dens))])


# ---------------------------------------------------------------------------
# priors over the whole space
# ---------------------------------------------------------------------------


class _ScaledPrior:
    """Shared min-max scaling and complement logic.

    Subclasses provide ``raw_density(U)``, ``sample_unit(n, rng)``,
    ``mode_unit()`` and set ``space``.
    """

    space: SearchSpace
    _scale: tuple[float, float] | None = None
    _bad_norm: float = 1.0

    def calibrate(self) -> None:
        mn, mx = self._probe_range()
        self._scale = (float(mn), float(mx))
        self._bad_norm = 1.0
        if self.space.is_discrete:
            self._bad_norm = self._discrete_bad_mass()

    def _probe_points(self) -> np.ndarray:
        probe = qmc.Halton(d=self.space.dim, seed=0).random(N_PROBE)
        return self.space.snap(np.vstack([probe, self.mode_unit()[None, :]]))

    def _probe_range(self):
        dens = self.raw_density(self._probe_points())
        return float(np.min(dens)), float(np.max(dens))

    def _discrete_bad_mass(self) -> float:
        n = self.space.cardinality()
        if n <= 200_000:
            grids = [np.linspace(0, 1, p.size) for p in self.space.parameters]
            pts = np.stack(np.meshgrid(*grids, indexing="ij"), -1).reshape(-1, self.space.dim)
            return float(np.sum(np.clip(1.0 - self._scaled(pts), EPS, 1.0)))
        # the raw joint pmf sums to one, so the scaled sum has a closed form
        mn, mx = self._scale
        good_sum = (1.0 - n * mn) / (mx - mn) if mx > mn else float(n)
        return max(n - good_sum, EPS)

    @property
    def calibrated(self) -> bool:
        return self._scale is not None

    def _scaled(self, U):
        if self._scale is None:
            raise PriorStateError("prior scale cache not initialized; call calibrate()")
        mn, mx = self._scale
        raw = self.raw_density(U)
        if mx - mn <= 1e-12 * max(abs(mx), 1e-300):
            return np.ones_like(raw)
        return (raw - mn) / (mx - mn)

    def density_good(self, U) -> np.ndarray:
        """Min-max scaled prior density, clamped to ``[EPS, 1]``."""
        return np.clip(self._scaled(np.atleast_2d(U)), EPS, 1.0)

    def density_bad(self, U) -> np.ndarray:
        bad = np.clip(1.0 - self._scaled(np.atleast_2d(U)), EPS, 1.0)
        if self.space.is_discrete:
            bad = np.clip(bad / self._bad_norm, EPS, 1.0)
        return bad

    def log_densities(self, U) -> tuple[np.ndarray, np.ndarray]:
        return np.log(self.density_good(U)), np.log(self.density_bad(U))

    def sample(self, n: int, rng: np.random.Generator) -> list[dict]:
        return [self.space.denormalize(u) for u in self.sample_unit(n, rng)]

    def mode(self) -> dict:
        return self.space.denormalize(self.mode_unit())


class FactorizedPrior(_ScaledPrior):
    """Product of independent per-dimension priors."""

    def __init__(self, space: SearchSpace, specs: Sequence, calibrate: bool = True):
        specs = list(specs)
        if len(specs) != space.dim:
            raise ValueError(f"{len(specs)} prior specs for a {space.dim}-dimensional space")
        self.space = space
        self.specs = []
        for p, s in zip(space.parameters, specs):
            if isinstance(p, Continuous) and isinstance(s, DiscreteWeights):
                raise ValueError(f"{p.name}: probability lists need a discrete parameter")
            self.specs.append(_discretize(s, p.size) if p.is_discrete else s)
        if calibrate:
            self.calibrate()

    @classmethod
    def uniform(cls, space: SearchSpace) -> "FactorizedPrior":
        return cls(space, [Uniform() for _ in space.parameters])

    def raw_density(self, U) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        out = np.ones(U.shape[0])
        for j, s in enumerate(self.specs):
            out = out * s.pdf(U[:, j])
        return out

    def _probe_range(self):
        if self.space.is_discrete:
            mins = [min(s.probs) for s in self.specs]
            maxs = [max(s.probs) for s in self.specs]
            return math.prod(mins), math.prod(maxs)
        return super()._probe_range()

    def sample_unit(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n <= 0:
            return np.empty((0, self.space.dim))
        cols = [np.clip(s.sample(n, rng), 0.0, 1.0) for s in self.specs]
        return self.space.snap(np.column_stack(cols))

    def mode_unit(self) -> np.ndarray:
        return self.space.snap(np.array([mode_1d(s) for s in self.specs]))


class JointKdePrior(_ScaledPrior):
    """Multivariate Gaussian KDE over a set of unit-cube points."""

    def __init__(self, space: SearchSpace, points, a: float = 100.0, b: float = 0.0,
                 calibrate: bool = True):
        self.space = space
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        n, d = self.points.shape
        self.a, self.b = a, b
        self.bandwidth = kde_bandwidth_factor(n, d, a, b)
        if not self.bandwidth > 0:
            raise ValueError("KDE bandwidth must be positive")
        cov = np.atleast_2d(np.cov(self.points, rowvar=False)) if n > 1 else np.zeros((d, d))
        cov = cov * self.bandwidth**2 + np.eye(d) * _MIN_KERNEL_STD**2
        self.kernel_cov = cov
        self._chol = np.linalg.cholesky(cov)
        self._log_norm = -0.5 * d * math.log(2 * math.pi) - np.log(np.diag(self._chol)).sum()
        if calibrate:
            self.calibrate()

    def raw_density(self, U) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        diff = U[:, None, :] - self.points[None, :, :]
        z = np.linalg.solve(self._chol, diff.reshape(-1, self.space.dim).T).T
        sq = (z**2).sum(-1).reshape(U.shape[0], -1)
        logk = self._log_norm - 0.5 * sq
        m = logk.max(1, keepdims=True)
        return np.exp(m[:, 0]) * np.exp(logk - m).mean(1)

    def sample_unit(self, n: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((0, self.space.dim))
        while out.shape[0] < n:
            m = n - out.shape[0]
            c = self.points[rng.integers(0, len(self.points), size=m)]
            draw = c + rng.standard_normal((m, self.space.dim)) @ self._chol.T
            ok = np.all((draw >= 0) & (draw <= 1), axis=1)
            out = np.vstack([out, draw[ok]])
        return self.space.snap(out[:n])

    def mode_unit(self) -> np.ndarray:
        dens = self.raw_density(self.points)
        return self.points[int(np.argmax(dens))].copy()


_MIN_KERNEL_STD = 1e-4


def kde_bandwidth_factor(n: int, d: int, a: float = 100.0, b: float = 0.0) -> float:
    """Kernel width as a multiple of the data standard deviation.

    ``a = 1, b = 4`` reproduces Scott's rule. Larger ``a`` and smaller ``b``
    give narrower kernels.
    """
    return n ** (-1.0 / (d + b)) / a


# ---------------------------------------------------------------------------
# constructors used by the experiments
# ---------------------------------------------------------------------------


def build_synthetic_prior(space: SearchSpace, optimum, sigma_x: float,
                          rng: np.random.Generator) -> FactorizedPrior:
    """Gaussian per dimension, centred on a noisy copy of the optimum.

    The centre is drawn from ``N(x_opt, sigma_x^2)`` in unit coordinates, so
    every call with a fresh generator gives a differently displaced prior.
    """
    if not sigma_x > 0:
        raise ValueError("sigma_x must be positive")
    x_opt = space.normalize(optimum)
    mus = rng.normal(x_opt, sigma_x)
    return FactorizedPrior(space, [GaussianTrunc(float(m), sigma_x) for m in mus])


def _uniform_pool(space, objective_batch, n_samples, rng, chunk=1_000_000):
    """Evaluate ``n_samples`` uniform points in chunks; return (U, y)."""
    Us, ys = [], []
    left = n_samples
    while left > 0:
        m = min(chunk, left)
        U = space.uniform_sample_unit(m, rng)
        Us.append(U)
        ys.append(np.asarray(objective_batch(_unit_to_native_array(space, U)), dtype=float))
        left -= m
    return np.vstack(Us), np.concatenate(ys)


def _unit_to_native_array(space: SearchSpace, U: np.ndarray) -> np.ndarray:
    """Vectorized denormalize for continuous spaces (used by closed-form benchmarks)."""
    if not space.is_continuous:
        raise ValueError("batch evaluation needs a continuous space")
    out = np.empty_like(U)
    for j, p in enumerate(space.parameters):
        if p.log_scale:
            a, b = math.log(p.lo), math.log(p.hi)
            out[:, j] = np.exp(a + U[:, j] * (b - a))
        else:
            out[:, j] = p.lo + U[:, j] * (p.hi - p.lo)
    return out


def build_misleading_prior(space: SearchSpace, objective_batch: Callable, rng: np.random.Generator,
                           n_samples: int | None = None, sigma: float = 0.01) -> FactorizedPrior:
    """Gaussian prior centred on the worst of ``n_samples`` uniform points."""
    n_samples = 100_000 * space.dim if n_samples is None else n_samples
    if n_samples < 1:
        raise ValueError("misleading prior needs at least one sample")
    U, y = _uniform_pool(space, objective_batch, n_samples, rng)
    worst = U[int(np.nanargmax(y))]
    return FactorizedPrior(space, [GaussianTrunc(float(w), sigma) for w in worst])


def build_kde_prior(space: SearchSpace, objective_batch: Callable, dataset_size: int, top_k: int,
                    multivariate: bool, rng: np.random.Generator, a: float = 100.0,
                    b: float = 0.0, pool: tuple | None = None):
    """KDE prior on the ``top_k`` best of ``dataset_size`` uniform points.

    Pass the same ``pool=(U, y)`` to build the univariate and multivariate
    variant from identical points.
    """
    if not 1 <= top_k <= dataset_size:
        raise ValueError("need 1 <= top_k <= dataset_size")
    U, y = pool if pool is not None else _uniform_pool(space, objective_batch, dataset_size, rng)
    best = U[np.argsort(y, kind="stable")[:top_k]]
    if multivariate:
        return JointKdePrior(space, best, a=a, b=b)
    specs = []
    factor = kde_bandwidth_factor(top_k, 1, a, b)
    for j in range(space.dim):
        col = best[:, j]
        std = float(np.std(col, ddof=1)) if top_k > 1 else 0.0
        bw = math.sqrt((std * factor) ** 2 + _MIN_KERNEL_STD**2)
        specs.append(KDE(tuple(col), bw))
    return FactorizedPrior(space, specs)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _to_unit_loc_scale(param, mu, sigma):
    if isinstance(param, Continuous):
        if param.log_scale:
            width = math.log(param.hi) - math.log(param.lo)
            return param.to_unit(min(max(mu, param.lo), param.hi)), sigma / width
        width = param.hi - param.lo
        return (mu - param.lo) / width, sigma / width
    if isinstance(param, Ordinal):
        ranks = np.linspace(0, 1, param.size)
        vals = np.asarray(param.values)
        return float(np.interp(mu, vals, ranks)), sigma / (vals[-1] - vals[0])
    return float(mu), float(sigma)


def spec_from_dict(d: Mapping[str, Any] | None, param, base_dir: Path | None = None):
    """Build a one-dimensional prior from its JSON form.

    Locations and widths are in native units unless ``"units": "unit"``.
    """
    if not d:
        return Uniform()
    kind = d.get("type", "uniform")
    native = d.get("units", "native") == "native"
    if kind == "uniform":
        return Uniform()
    if kind in ("gaussian", "normal"):
        mu, sigma = float(d["mu"]), float(d["sigma"])
        if native:
            mu, sigma = _to_unit_loc_scale(param, mu, sigma)
        return GaussianTrunc(mu, sigma)
    if kind in ("decay", "exponential"):
        default = "decreasing" if kind == "decay" else "increasing"
        return Exponential(float(d.get("rate", 10.0)), d.get("direction", default))
    if kind == "beta":
        return Beta(float(d["a"]), float(d["b"]))
    if kind == "weights":
        return DiscreteWeights(tuple(d["probs"]))
    if kind == "kde":
        if "centers" in d:
            centers = d["centers"]
        else:
            path = Path(d["centers_file"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            centers = json.loads(path.read_text())
        centers = np.asarray(centers, dtype=float)
        if native:
            centers = np.array([param.to_unit(c) for c in centers])
        n = len(centers)
        factor = kde_bandwidth_factor(n, 1, float(d.get("a", 100.0)), float(d.get("b", 0.0)))
        std = float(np.std(centers, ddof=1)) if n > 1 else 0.0
        return KDE(tuple(centers), math.sqrt((std * factor) ** 2 + _MIN_KERNEL_STD**2))
    if kind == "mixture":
        comps = tuple(spec_from_dict(c, param, base_dir) for c in d["components"])
        return Mixture(comps, tuple(float(w) for w in d["weights"]))
    raise ValueError(f"unknown prior type {kind!r}")


def prior_from_space_dict(space: SearchSpace, spec: Mapping[str, Any],
                          base_dir: Path | None = None) -> FactorizedPrior:
    by_name = {p["name"]: p.get("prior") for p in spec["parameters"]}
    specs = [spec_from_dict(by_name.get(p.name), p, base_dir) for p in space.parameters]
    return FactorizedPrior(space, specs)


# native-point conveniences --------------------------------------------------


def density_good(prior, x: Mapping[str, Any]) -> float:
    return float(prior.density_good(prior.space.normalize(x))[0])


def density_bad(prior, x: Mapping[str, Any]) -> float:
    return float(prior.density_bad(prior.space.normalize(x))[0])
