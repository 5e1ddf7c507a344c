"""Uniform time grids and grid functions of one variable."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [t0, T] into n_steps cells.

    Nodes are t_i = t0 + i*dt with dt = (T - t0)/n_steps, i = 0..n_steps.
    """

    t0: float
    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.t0 < 0:
            raise ValueError("t0 must be >= 0")
        if not self.horizon > self.t0:
            raise ValueError("horizon must exceed t0")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def dt(self) -> float:
        return (self.horizon - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t0, self.horizon, self.n_steps + 1)

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.horizon, self.n_steps * factor)


@dataclass
class GridFn1D:
    """Scalar samples on a TimeGrid, understood as piecewise linear."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_steps + 1,):
            raise ValueError(
                f"values must have one entry per node "
                f"({self.grid.n_steps + 1}), got {self.values.shape}"
            )

    def __call__(self, t):
        return np.interp(t, self.grid.nodes, self.values)
