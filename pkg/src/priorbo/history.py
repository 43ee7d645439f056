"""Ordered record of evaluated points."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .space import SearchSpace


@dataclass(frozen=True)
class Trial:
    x: dict[str, Any]
    u: np.ndarray
    y: float
    feasible: bool = True


@dataclass
class TrialHistory:
    space: SearchSpace
    trials: list[Trial] = field(default_factory=list)

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    def add(self, x: dict[str, Any], y: float, feasible: bool = True) -> Trial:
        y = float(y)
        feasible = bool(feasible) and math.isfinite(y)
        trial = Trial(dict(x), self.space.normalize(x), y, feasible)
        self.trials.append(trial)
        return trial

    def add_unit(self, u, y: float, feasible: bool = True) -> Trial:
        return self.add(self.space.denormalize(u), y, feasible)

    @property
    def U(self) -> np.ndarray:
        if not self.trials:
            return np.empty((0, self.space.dim))
        return np.array([t.u for t in self.trials])

    @property
    def y(self) -> np.ndarray:
        return np.array([t.y for t in self.trials], dtype=float)

    @property
    def feasible_mask(self) -> np.ndarray:
        return np.array([t.feasible for t in self.trials], dtype=bool)

    def feasible_data(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.feasible_mask
        if not m.any():
            return np.empty((0, self.space.dim)), np.empty(0)
        return self.U[m], self.y[m]

    def incumbent(self) -> Trial | None:
        best = None
        for t in self.trials:
            if t.feasible and (best is None or t.y < best.y):
                best = t
        return best

    def contains_unit(self, u, tol: float = 1e-12) -> bool:
        if not self.trials:
            return False
        return bool(np.any(np.all(np.abs(self.U - np.asarray(u)) <= tol, axis=1)))
