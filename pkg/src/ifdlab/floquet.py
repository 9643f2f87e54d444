"""Principal eigenvalues of linear periodic-parabolic problems.

For phi_t = L(t) phi + V phi over one period, the principal multiplier rho
of the period map is found by power iteration on the positive cone and
lambda_1 = -ln(rho) / T, so lambda_1 < 0 means growth. Two operator forms
share the grid:

- divergence: d/dx[mu phi_x - P phi] with zero total flux at both ends,
- nondivergence: d/dx[mu phi_x] + b phi_x with phi_x = 0 at both ends,

and the second is the exact matrix transpose of the first with b = P.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .bernoulli import compute_Ktilde, solve_M
from .dynamics import (
    NonConvergenceError,
    NumericalFailure,
    PeriodicOrbit,
    choose_substeps,
    coefficient_table,
    operator_diagonal_bound,
    table_size,
)
from .fitness import fitness_field
from .mesh import Environment, Grid, SpaceTimeField, check_peclet, face_average
from .strategy import PeriodicPath, Strategy, path_integral

FORMS = ("divergence", "nondivergence")
RTOL = 1e-10
WINDOW = 10
MAX_ITERS = 10_000
EPS_INVADE = 1e-8


class SignChangeError(NumericalFailure):
    pass


@dataclass(frozen=True)
class LinearProblem:
    form: str
    mu: SpaceTimeField
    drift: SpaceTimeField
    potential: SpaceTimeField
    drift_faces: np.ndarray | None = None

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}, got {self.form!r}")
        if self.mu.min() <= 0:
            raise ValueError("mu must be positive")
        if not (self.mu.grid == self.drift.grid == self.potential.grid):
            raise ValueError("fields live on different grids")

    @property
    def grid(self) -> Grid:
        return self.mu.grid

    def faces(self) -> np.ndarray:
        return self.drift_faces if self.drift_faces is not None else face_average(self.drift.values)

    def _reflected_faces(self):
        if self.drift_faces is None:
            return None
        return self.drift_faces[:, (-np.arange(self.grid.nt)) % self.grid.nt]

    def reversed_time(self) -> "LinearProblem":
        """Same operator form with every coefficient reflected t -> T - t."""
        return LinearProblem(self.form, self.mu.reversed_time(), self.drift.reversed_time(),
                             self.potential.reversed_time(), self._reflected_faces())

    def adjoint(self) -> "LinearProblem":
        """The formally adjoint problem in reversed time (form swapped)."""
        other = "nondivergence" if self.form == "divergence" else "divergence"
        return LinearProblem(other, self.mu.reversed_time(), self.drift.reversed_time(),
                             self.potential.reversed_time(), self._reflected_faces())

    def shifted(self, delta: float) -> "LinearProblem":
        return LinearProblem(self.form, self.mu, self.drift,
                             self.potential.with_values(self.potential.values + delta), self.drift_faces)


@dataclass(frozen=True)
class FloquetResult:
    rho: float
    lambda1: float
    eigenfunction: np.ndarray  # (nx, nt), max 1
    residual: float
    iters: int
    substeps: int

    @property
    def positive(self) -> bool:
        return bool(self.eigenfunction.min() > 0)

    def to_json(self) -> dict:
        return {"rho": self.rho, "lambda1": self.lambda1, "residual": self.residual,
                "iters": self.iters, "substeps": self.substeps, "eigenfunction_min": float(self.eigenfunction.min())}


class LinearPeriodMap:
    """phi(0) -> phi(T) for a LinearProblem, with tables built once."""

    def __init__(self, p: LinearProblem, substeps: int | None = None):
        grid = p.grid
        self.problem = p
        mu_f = face_average(p.mu.values)
        d_f = p.faces()
        diag = operator_diagonal_bound(mu_f, d_f, grid.h) + float(np.abs(p.potential.values).max())
        self.S = choose_substeps(grid, float(p.mu.max()), float(np.abs(p.drift.values).max()), diag, substeps)
        nf = table_size(grid, self.S)
        self._mu = coefficient_table(mu_f, nf)
        self._d = coefficient_table(d_f, nf)
        self._v = coefficient_table(p.potential.values, nf)
        self._nondiv = p.form == "nondivergence"
        self.grid = grid

    def __call__(self, phi: np.ndarray, snapshots: bool = False):
        y = np.array(phi, dtype=float, copy=True)
        snaps = np.empty((self.grid.nt if snapshots else 0, self.grid.nx))
        status = _kernels.linear_period(y, self._mu, self._d, self._v, self._nondiv, self.grid.h,
                                        self.grid.T / self.S, self.S, self.S // self.grid.nt, snaps)
        if status != _kernels.OK:
            raise NumericalFailure("linear period map produced non-finite values")
        return (y, snaps) if snapshots else y


def _check_cone(y: np.ndarray, it: int) -> None:
    if y.min() < -1e-10 * np.abs(y).max():
        raise SignChangeError(f"iterate {it} changed sign (min {y.min():.3g}); the period map left the positive cone")


def principal_eigenvalue(p: LinearProblem, substeps: int | None = None, rtol: float = RTOL,
                         max_iters: int = MAX_ITERS, initial: np.ndarray | None = None) -> FloquetResult:
    """Power iteration with the L1 ratio as Rayleigh quotient."""
    if p.form == "divergence":
        check_peclet(p.mu, p.drift, "linear problem")
    pm = LinearPeriodMap(p, substeps)
    grid = p.grid
    y = np.ones(grid.nx) if initial is None else np.array(initial, dtype=float)
    y /= y.sum()
    ratios = []
    for it in range(1, max_iters + 1):
        z = pm(y)
        _check_cone(z, it)
        s = z.sum()
        if not s > 0:
            raise SignChangeError("iterate collapsed to zero or lost positivity")
        ratios.append(s)  # ||y||_1 = 1
        y = z / s
        if it > WINDOW and abs(ratios[-1] - ratios[-1 - WINDOW]) <= rtol * ratios[-1]:
            break
    else:
        raise NonConvergenceError(
            f"power iteration did not converge in {max_iters} iterations "
            f"(last ratios {ratios[-2]:.15g}, {ratios[-1]:.15g})",
            np.array(ratios),
        )
    rho = ratios[-1]
    z, snaps = pm(y, snapshots=True)
    residual = float(np.abs(z - rho * y).max() / (rho * y.max()))
    lam = -math.log(rho) / grid.T
    # undo the exponential growth to get the periodic eigenfunction
    eig = snaps.T * np.exp(lam * grid.t)[None, :]
    eig /= eig.max()
    np.maximum(eig, 0.0, out=eig)
    return FloquetResult(rho, lam, eig, residual, it, pm.S)


def invades(result: FloquetResult, eps: float = EPS_INVADE) -> bool:
    return result.lambda1 < -eps


def invasion_test(env: Environment, resident_orbit: PeriodicOrbit, invader: Strategy,
                  substeps: int | None = None) -> FloquetResult:
    """Linear stability of (theta*, 0): invader in divergence form with potential F."""
    F = fitness_field(env, resident_orbit.total()).F
    p = LinearProblem("divergence", invader.mu, invader.P, F, invader.P_faces)
    return principal_eigenvalue(p, substeps)


def competitor_repulsion(env: Environment, ifd: Strategy, competitor_orbit: PeriodicOrbit,
                         sol=None) -> FloquetResult:
    """sigma_1 for the IFD strategy linearized at the competitor's semitrivial orbit.

    Potential r_hat (K~ - V*) with r_hat = r M / K and V* = v* / M, in the
    divergence form of the IFD strategy; sigma_1 < 0 means the competitor's
    orbit is repelling.
    """
    sol = solve_M(env) if sol is None else sol
    M = sol.M.values[None, :]
    Kt = compute_Ktilde(env, sol).values
    V = competitor_orbit.total().values / M
    pot = SpaceTimeField(env.grid, env.r.values * M / env.K.values * (Kt - V), name="r_hat (K~ - V*)")
    return principal_eigenvalue(LinearProblem("divergence", ifd.mu, ifd.P, pot, ifd.P_faces))


@dataclass(frozen=True)
class SweepPoint:
    alpha: float
    lambda1: float
    rho: float
    iters: int
    substeps: int


@dataclass(frozen=True)
class SweepResult:
    points: list
    bound: float  # -(1/T) * integral of V along the path

    @property
    def alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.points])

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lambda1 for p in self.points])

    def non_increasing(self, tol: float = 1e-9) -> bool:
        lam = self.lambdas
        return bool(np.all(np.diff(lam) <= tol * (1.0 + np.abs(lam[:-1]))))

    def bound_holds(self, slack: float = 0.1) -> bool:
        """lambda_1 at the largest alpha against the limit bound, with slack."""
        return bool(self.lambdas[-1] <= self.bound + slack * max(1.0, abs(self.bound)))


def sweep_potential(V: SpaceTimeField, gamma: np.ndarray, mu: float, alphas, jobs: int = 1,
                    substeps: int | None = None) -> list:
    """lambda_1 of phi_t = mu phi_xx + alpha (gamma - x) phi_x + V phi for each alpha."""
    grid = V.grid
    alphas = [float(a) for a in alphas]
    if any(a <= 0 for a in alphas) or any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be positive and increasing")
    mu_f = SpaceTimeField.constant(grid, mu, positive=True, name="mu")
    pull = np.asarray(gamma, dtype=float)[None, :] - grid.x[:, None]

    def one(a):
        p = LinearProblem("nondivergence", mu_f, SpaceTimeField(grid, a * pull, name="drift"), V)
        res = principal_eigenvalue(p, substeps)
        return SweepPoint(a, res.lambda1, res.rho, res.iters, res.substeps)

    if jobs > 1 and len(alphas) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(one, alphas))
    return [one(a) for a in alphas]


def alpha_sweep(env: Environment, resident_orbit: PeriodicOrbit, path: PeriodicPath, mu: float, alphas,
                jobs: int = 1, substeps: int | None = None) -> SweepResult:
    """Pursuit invader eigenvalues in time-reversed nondivergence form.

    V(x, t) = F(x, T - t) and the drift follows gamma(T - t); the bound is
    -(1/T) times the integral of F along gamma, which equals that of V along
    the reversed path.
    """
    F = fitness_field(env, resident_orbit.total()).F
    V = F.reversed_time()
    rev = path.reversed_time()
    points = sweep_potential(V, rev.gamma, mu, alphas, jobs, substeps)
    bound = -path_integral(F, path.gamma) / env.grid.T
    return SweepResult(points, bound)
