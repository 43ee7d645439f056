"""Parameter types and the native <-> unit-cube transform.

Every surrogate, prior and local search in the package works on points in
``[0, 1]^D``. Native values only appear at the boundaries: user configs,
objective calls and CSV output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np


class DomainError(ValueError):
    """A value lies outside the declared range of a parameter."""


@dataclass(frozen=True)
class Continuous:
    name: str
    lo: float
    hi: float
    log_scale: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi, got [{self.lo}, {self.hi}]")
        if self.log_scale and self.lo <= 0:
            raise ValueError(f"{self.name}: log-scaled range must be positive")

    @property
    def is_discrete(self) -> bool:
        return False

    def to_unit(self, value: float) -> float:
        value = float(value)
        if not self.lo <= value <= self.hi:
            raise DomainError(f"{self.name}={value} outside [{self.lo}, {self.hi}]")
        if self.log_scale:
            a, b = math.log(self.lo), math.log(self.hi)
            return min(1.0, max(0.0, (math.log(value) - a) / (b - a)))
        return (value - self.lo) / (self.hi - self.lo)

    def from_unit(self, u: float) -> float:
        u = min(1.0, max(0.0, float(u)))
        if u == 1.0:
            return self.hi
        if u == 0.0:
            return self.lo
        if self.log_scale:
            a, b = math.log(self.lo), math.log(self.hi)
            return min(self.hi, max(self.lo, math.exp(a + u * (b - a))))
        return self.lo + u * (self.hi - self.lo)


@dataclass(frozen=True)
class Ordinal:
    name: str
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise ValueError(f"{self.name}: ordinal needs at least 2 values")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError(f"{self.name}: ordinal values must be strictly increasing")

    @property
    def is_discrete(self) -> bool:
        return True

    @property
    def size(self) -> int:
        return len(self.values)

    def index(self, value) -> int:
        try:
            return self.values.index(float(value))
        except (ValueError, TypeError):
            raise DomainError(f"{self.name}={value!r} not in {list(self.values)}") from None

    def to_unit(self, value) -> float:
        return self.index(value) / (self.size - 1)

    def from_unit(self, u: float):
        u = min(1.0, max(0.0, float(u)))
        v = self.values[int(round(u * (self.size - 1)))]
        return int(v) if v.is_integer() else v


@dataclass(frozen=True)
class Categorical:
    name: str
    values: tuple[str, ...]

    def __post_init__(self):
        vals = tuple(str(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise ValueError(f"{self.name}: categorical needs at least 2 values")
        if len(set(vals)) != len(vals):
            raise ValueError(f"{self.name}: categorical values must be distinct")

    @property
    def is_discrete(self) -> bool:
        return True

    @property
    def size(self) -> int:
        return len(self.values)

    def index(self, value) -> int:
        key = str(value).lower() if isinstance(value, bool) else str(value)
        try:
            return self.values.index(key)
        except ValueError:
            raise DomainError(f"{self.name}={value!r} not in {list(self.values)}") from None

    def to_unit(self, value) -> float:
        return self.index(value) / (self.size - 1)

    def from_unit(self, u: float) -> str:
        u = min(1.0, max(0.0, float(u)))
        return self.values[int(round(u * (self.size - 1)))]


Parameter = Continuous | Ordinal | Categorical


@dataclass(frozen=True)
class SearchSpace:
    parameters: tuple[Parameter, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        params = tuple(self.parameters)
        object.__setattr__(self, "parameters", params)
        if not params:
            raise ValueError("search space needs at least one parameter")
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def dim(self) -> int:
        return len(self.parameters)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.parameters]

    @property
    def is_continuous(self) -> bool:
        return not any(p.is_discrete for p in self.parameters)

    @property
    def is_discrete(self) -> bool:
        return all(p.is_discrete for p in self.parameters)

    def __getitem__(self, name: str) -> Parameter:
        return self.parameters[self._index[name]]

    def normalize(self, x: Mapping[str, Any] | Sequence) -> np.ndarray:
        """Map a native point (dict by name, or sequence in order) to the unit cube."""
        if isinstance(x, Mapping):
            missing = set(self.names) - set(x)
            if missing:
                raise DomainError(f"missing parameters: {sorted(missing)}")
            vals = [x[n] for n in self.names]
        else:
            vals = list(x)
            if len(vals) != self.dim:
                raise DomainError(f"expected {self.dim} values, got {len(vals)}")
        return np.array([p.to_unit(v) for p, v in zip(self.parameters, vals)])

    def denormalize(self, u: Sequence[float]) -> dict[str, Any]:
        u = np.asarray(u, dtype=float).ravel()
        return {p.name: p.from_unit(ui) for p, ui in zip(self.parameters, u)}

    def snap(self, U: np.ndarray) -> np.ndarray:
        """Clamp to the cube and move discrete coordinates onto their grid."""
        U = np.clip(np.array(U, dtype=float), 0.0, 1.0)
        for j, p in enumerate(self.parameters):
            if p.is_discrete:
                k = p.size - 1
                U[..., j] = np.round(U[..., j] * k) / k
        return U

    def uniform_sample_unit(self, n: int, rng: np.random.Generator) -> np.ndarray:
        U = rng.random((n, self.dim))
        for j, p in enumerate(self.parameters):
            if p.is_discrete:
                U[:, j] = rng.integers(0, p.size, size=n) / (p.size - 1)
        return U

    def uniform_sample(self, n: int, rng: np.random.Generator) -> list[dict[str, Any]]:
        if n <= 0:
            return []
        return [self.denormalize(u) for u in self.uniform_sample_unit(n, rng)]

    def cardinality(self) -> int | None:
        """Number of points for a fully discrete space, else None."""
        if not self.is_discrete:
            return None
        return math.prod(p.size for p in self.parameters)

    @classmethod
    def from_dict(cls, spec: Mapping[str, Any]) -> "SearchSpace":
        return cls(tuple(parameter_from_dict(p) for p in spec["parameters"]))

    def to_dict(self) -> dict:
        out = []
        for p in self.parameters:
            if isinstance(p, Continuous):
                out.append({"name": p.name, "type": "continuous",
                            "range": [p.lo, p.hi], "log": p.log_scale})
            elif isinstance(p, Ordinal):
                out.append({"name": p.name, "type": "ordinal", "values": list(p.values)})
            else:
                out.append({"name": p.name, "type": "categorical", "values": list(p.values)})
        return {"parameters": out}


def parameter_from_dict(d: Mapping[str, Any]) -> Parameter:
    kind = d.get("type", "continuous")
    name = d["name"]
    if kind in ("continuous", "real", "float"):
        lo, hi = d["range"]
        return Continuous(name, float(lo), float(hi), bool(d.get("log", False)))
    if kind in ("ordinal", "integer"):
        return Ordinal(name, tuple(d["values"]))
    if kind == "categorical":
        vals = [str(v).lower() if isinstance(v, bool) else v for v in d["values"]]
        return Categorical(name, tuple(vals))
    raise ValueError(f"unknown parameter type {kind!r} for {name!r}")
