"""Time stepping of the single-, two- and N-species models over whole periods.

The method-of-lines system

    du_n/dt = A_n(t) u_n + r u_n (1 - sum_m u_m / K)

is advanced with classical RK4. Coefficients are tabulated over one period
by trigonometric upsampling of the nt samples and read at each stage time,
so the period map is a pure function of the state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .mesh import (
    Environment,
    Grid,
    SpaceTimeField,
    apply_flux_divergence,
    face_average,
    time_derivative,
    upsample_time,
)
from .strategy import Strategy

__all__ = [
    "Environment",
    "PeriodMap",
    "PeriodicOrbit",
    "Trajectory",
    "step_period",
    "find_periodic_orbit",
    "run_competition",
    "NumericalFailure",
    "NonConvergenceError",
    "ExtinctionError",
]

log = logging.getLogger(__name__)

DIFFUSIVE_CFL = 0.4
ADVECTIVE_CFL = 1.0
DIAGONAL_CFL = 0.9  # keeps the RK4 update absolutely monotone (radius 1)
MIN_STEPS_PER_NODE = 4
MAX_TABLE_FACTOR = 16
NEG_TOL = 1e-12
# the reaction step bound assumes sum(u) / K stays below this multiple of its largest value at a period start
REACTION_SAFETY = 2.0


class NumericalFailure(ArithmeticError):
    pass


class NonConvergenceError(NumericalFailure):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class ExtinctionError(NumericalFailure):
    pass


def choose_substeps(grid: Grid, mu_max: float, adv_max: float, diag_max: float,
                    requested: int | None = None) -> int:
    """Steps per period meeting the explicit stability bounds, rounded up to a multiple of nt."""
    h = grid.h
    dt = DIFFUSIVE_CFL * h * h / mu_max
    if adv_max > 0:
        dt = min(dt, ADVECTIVE_CFL * h / adv_max)
    if diag_max > 0:
        dt = min(dt, DIAGONAL_CFL / diag_max)
    S = max(math.ceil(grid.T / dt), MIN_STEPS_PER_NODE * grid.nt)
    if requested is not None and requested > S:
        S = requested
    elif requested is not None and requested < S:
        log.info("substeps raised from %d to %d for stability", requested, S)
    return grid.nt * math.ceil(S / grid.nt)


def coefficient_table(values: np.ndarray, nf: int) -> np.ndarray:
    """(m, nt) samples -> (nf, m) periodic table by trigonometric interpolation."""
    nt = values.shape[1]
    return np.ascontiguousarray(upsample_time(values.T, nf // nt, axis=0))


def table_size(grid: Grid, S: int) -> int:
    return 2 * S if 2 * S <= MAX_TABLE_FACTOR * grid.nt else MAX_TABLE_FACTOR * grid.nt


def operator_diagonal_bound(mu_f: np.ndarray, p_f: np.ndarray, h: float) -> float:
    """max |diagonal| of the flux operator over cells and time nodes (face arrays (nx+1, nt))."""
    mu_i = mu_f[1:-1]
    p_i = p_f[1:-1]
    nx = mu_f.shape[0] - 1
    diag = np.zeros((nx, mu_f.shape[1]))
    diag[:-1] += mu_i / h**2 + 0.5 * p_i / h
    diag[1:] += mu_i / h**2 - 0.5 * p_i / h
    return float(np.max(np.abs(diag)))


def _faces(f: SpaceTimeField) -> np.ndarray:
    return face_average(f.values)


@dataclass
class PeriodMap:
    """Nonlinear period map for N species sharing one environment."""

    env: Environment
    strategies: list
    substeps: int | None = None
    neg_tol: float = NEG_TOL
    S: int = field(init=False)
    density_ratio: float = field(init=False, default=REACTION_SAFETY)

    def __post_init__(self):
        grid = self.env.grid
        for s in self.strategies:
            if s.grid != grid:
                raise ValueError(f"strategy {s.label!r} lives on a different grid")
        mu_f = [_faces(s.mu) for s in self.strategies]
        p_f = [s.drift_faces() for s in self.strategies]
        r = self.env.r.values
        K = self.env.K.values
        self._op_diag = max(operator_diagonal_bound(m, p, grid.h) for m, p in zip(mu_f, p_f))
        self._mu_max = max(float(s.mu.max()) for s in self.strategies)
        self._adv = max(float(np.abs(s.P.values).max()) for s in self.strategies)
        self._r_max = float(r.max())
        self.S = self._substeps_for(self.density_ratio)
        nf = table_size(grid, self.S)
        self._mu = np.stack([coefficient_table(m, nf) for m in mu_f])
        self._p = np.stack([coefficient_table(p, nf) for p in p_f])
        self._r = coefficient_table(r, nf)
        self._K = coefficient_table(K, nf)

    def _substeps_for(self, ratio: float) -> int:
        # reaction Jacobian diagonal r (1 - (u_n + sum u) / K) is bounded by r (1 + 2 ratio)
        diag = self._op_diag + self._r_max * (1.0 + 2.0 * ratio)
        return choose_substeps(self.grid, self._mu_max, self._adv, diag, self.substeps)

    def _admit(self, U: np.ndarray) -> None:
        """Raise the step count if ``U`` exceeds the density ratio assumed so far."""
        need = REACTION_SAFETY * float(np.max(U.sum(axis=0) / self.env.K.values[:, 0]))
        if need > self.density_ratio:
            self.density_ratio = need
            S = self._substeps_for(need)
            if S > self.S:
                log.info("substeps raised from %d to %d for density ratio %.3g", self.S, S, need)
                self.S = S

    @property
    def grid(self) -> Grid:
        return self.env.grid

    @property
    def dt(self) -> float:
        return self.grid.T / self.S

    def __call__(self, state: np.ndarray, snapshots: bool = False):
        """Advance ``state`` (N, nx) by one period.

        Returns the new state, and with ``snapshots=True`` also an
        (nt, N, nx) array of states at the time nodes and the per-species
        reaction integrals.
        """
        U = np.array(state, dtype=float, ndmin=2, copy=True)
        N, nx = U.shape
        if N != len(self.strategies) or nx != self.grid.nx:
            raise ValueError(f"state shape {U.shape} does not match {len(self.strategies)} species x {self.grid.nx}")
        if U.min() < -self.neg_tol:
            raise ValueError("state must be nonnegative")
        np.maximum(U, 0.0, out=U)
        self._admit(U)
        snaps = np.empty((self.grid.nt if snapshots else 0, N, nx))
        react = np.zeros(N)
        status = _kernels.nonlinear_period(
            U, self._mu, self._p, self._r, self._K, self.grid.h, self.dt, self.S,
            self.S // self.grid.nt, snaps, self.neg_tol, react,
        )
        if status == _kernels.NEGATIVE:
            raise NumericalFailure("density fell below the negativity tolerance (CFL/Peclet violation?)")
        if status == _kernels.NONFINITE:
            raise NumericalFailure("non-finite density: the solution blew up")
        if snapshots:
            return U, snaps, react
        return U


def step_period(env: Environment, strategies, state, substeps: int | None = None) -> np.ndarray:
    return PeriodMap(env, list(strategies), substeps)(state)


@dataclass
class Trajectory:
    labels: list
    states: list  # (N, nx) arrays at the end of each recorded period
    masses: np.ndarray  # (periods + 1, N), sum_i u_i h
    grid: Grid

    @property
    def n_species(self) -> int:
        return self.masses.shape[1]

    def mass_rows(self):
        for p, row in enumerate(self.masses):
            for n, m in enumerate(row):
                yield p, n, float(m)


@dataclass
class PeriodicOrbit:
    states: np.ndarray  # (N, nx, nt)
    defect: float
    periods: int
    history: np.ndarray
    grid: Grid
    extinct: tuple = ()

    @property
    def positive(self) -> bool:
        return bool(self.states.min() > 0)

    def species(self, n: int = 0) -> SpaceTimeField:
        return SpaceTimeField(self.grid, self.states[n], name=f"u{n}")

    def total(self) -> SpaceTimeField:
        return SpaceTimeField(self.grid, self.states.sum(axis=0), name="total density")

    @classmethod
    def from_field(cls, theta: SpaceTimeField) -> "PeriodicOrbit":
        """Wrap a known periodic profile (e.g. M K~) as a one-species orbit."""
        return cls(theta.values[None].copy(), 0.0, 0, np.zeros(0), theta.grid)


def _mass(U: np.ndarray, h: float) -> np.ndarray:
    return U.sum(axis=1) * h


def find_periodic_orbit(env: Environment, strategies, initial, tol: float = 1e-9, max_periods: int = 20000,
                        substeps: int | None = None, extinction: float = 1e-14,
                        allow_extinction: bool = False) -> PeriodicOrbit:
    """Iterate the period map to a fixed point (sup-norm defect below ``tol``)."""
    pm = strategies if isinstance(strategies, PeriodMap) else PeriodMap(env, list(strategies), substeps)
    U = np.array(initial, dtype=float, ndmin=2)
    if U.min() < 0 or not U.any():
        raise ValueError("initial state must be nonnegative and nontrivial")
    history = []
    for period in range(1, max_periods + 1):
        V = pm(U)
        defect = float(np.max(np.abs(V - U)))
        history.append(defect)
        U = V
        dead = tuple(int(n) for n in np.nonzero(U.max(axis=1) < extinction)[0])
        if dead and not allow_extinction:
            raise ExtinctionError(f"species {list(dead)} went extinct after {period} periods")
        if defect < tol:
            break
    else:
        raise NonConvergenceError(
            f"no periodic orbit within {max_periods} periods (last defect {history[-1]:.3g})",
            np.array(history),
        )
    _, snaps, _ = pm(U, snapshots=True)
    states = np.transpose(snaps, (1, 2, 0)).copy()
    return PeriodicOrbit(states, defect, period, np.array(history), pm.grid, dead)


def run_competition(env: Environment, strat_u: Strategy, strat_v: Strategy, u0, v0, periods: int,
                    substeps: int | None = None, keep_states: int = 1, stop_ratio: float | None = None) -> Trajectory:
    """Evolve the two-species system; masses recorded after every period.

    ``keep_states`` final states are retained. With ``stop_ratio`` the run
    ends early once the second species' mass falls below that fraction of
    its initial mass.
    """
    pm = PeriodMap(env, [strat_u, strat_v], substeps)
    U = np.vstack([np.asarray(u0, dtype=float), np.asarray(v0, dtype=float)])
    if U.min() < 0 or not U.any():
        raise ValueError("initial data must be nonnegative and nontrivial")
    h = env.grid.h
    masses = [_mass(U, h)]
    states = []
    for _ in range(periods):
        U = pm(U)
        masses.append(_mass(U, h))
        states.append(U.copy())
        if len(states) > keep_states:
            states.pop(0)
        if stop_ratio is not None and masses[0][1] > 0 and masses[-1][1] < stop_ratio * masses[0][1]:
            break
    return Trajectory([strat_u.label, strat_v.label], states, np.array(masses), env.grid)


def pde_residual(env: Environment, strategy: Strategy, theta: SpaceTimeField,
                 exact_faces: bool = False) -> SpaceTimeField:
    """d_t theta - A(t) theta - r theta (1 - theta / K) on the grid, spectral in time.

    By default A uses the stored cell-centre drift averaged to faces; with
    ``exact_faces`` it uses the face velocities the period map integrates.
    """
    th = theta.values
    faces = strategy.drift_faces() if exact_faces else None
    res = (
        time_derivative(theta).values
        - apply_flux_divergence(th, strategy.mu, strategy.P, faces)
        - env.r.values * th * (1.0 - th / env.K.values)
    )
    return SpaceTimeField(env.grid, res, name="residual")
