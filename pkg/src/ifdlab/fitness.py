"""Fitness field F = r (1 - theta / K), pathwise fitness and the IFD verdict."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Environment, SpaceTimeField
from .strategy import PeriodicPath, path_integral

TOL_ANALYTIC = 1e-6
TOL_SIMULATED = 1e-2


@dataclass(frozen=True)
class FitnessField:
    F: SpaceTimeField
    flatness: float

    @property
    def grid(self):
        return self.F.grid

    def spread(self) -> np.ndarray:
        """max_x F - min_x F at each time node."""
        return self.F.values.max(axis=0) - self.F.values.min(axis=0)

    def to_json(self) -> dict:
        inf, sup = path_fitness_bounds(self)
        return {"flatness": self.flatness, "path_inf": inf, "path_sup": sup,
                "F_min": self.F.min(), "F_max": self.F.max()}


def fitness_field(env: Environment, theta: SpaceTimeField) -> FitnessField:
    if theta.grid != env.grid:
        raise ValueError("density and environment live on different grids")
    F = env.r.values * (1.0 - theta.values / env.K.values)
    field = SpaceTimeField(env.grid, F, name="F")
    return FitnessField(field, float(np.max(F.max(axis=0) - F.min(axis=0))))


def _as_fitness(F) -> FitnessField:
    if isinstance(F, FitnessField):
        return F
    v = F.values
    return FitnessField(F, float(np.max(v.max(axis=0) - v.min(axis=0))))


def is_ifd(F, tol: float = TOL_ANALYTIC) -> bool:
    """Spatially flat fitness at every time node, relative to the size of F."""
    ff = _as_fitness(F)
    return bool(ff.flatness < tol * (1.0 + float(np.abs(ff.F.values).max())))


def pathwise_fitness(F, gamma) -> float:
    """Integral of F along a periodic path (trapezoid in t, linear in x)."""
    ff = _as_fitness(F)
    g = gamma.gamma if isinstance(gamma, PeriodicPath) else np.asarray(gamma, dtype=float)
    return path_integral(ff.F, g)


def path_fitness_bounds(F) -> tuple[float, float]:
    """(inf, sup) of pathwise fitness over all paths: integrals of min_x F and max_x F."""
    ff = _as_fitness(F)
    tau = ff.grid.tau
    v = ff.F.values
    return float(v.min(axis=0).sum() * tau), float(v.max(axis=0).sum() * tau)


def space_time_integral(F) -> float:
    """Unweighted double integral of F; logged in reports, not a conserved quantity."""
    ff = _as_fitness(F)
    g = ff.grid
    return float(ff.F.values.sum() * g.h * g.tau)
