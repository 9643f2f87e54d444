"""Dispersal strategies: the IFD advection field and the pursuit invader."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .bernoulli import (
    InfeasibleEnvironmentError,
    check_feasibility,
    compute_Ktilde,
    solve_M,
)
from .mesh import Environment, Grid, SpaceTimeField, check_peclet, face_average, time_derivative, write_field_csv

log = logging.getLogger(__name__)


class CompatibilityError(ValueError):
    def __init__(self, message, worst_t=None, defect=None):
        super().__init__(message)
        self.worst_t = worst_t
        self.defect = defect


class PathError(ValueError):
    def __init__(self, message, raw_integral=None, achieved=None):
        super().__init__(message)
        self.raw_integral = raw_integral
        self.achieved = achieved


@dataclass(frozen=True)
class Strategy:
    mu: SpaceTimeField
    P: SpaceTimeField
    label: str = ""
    meta: dict = field(default_factory=dict)
    # exact face velocities when the construction defines them (nx + 1, nt)
    P_faces: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.mu.min() <= 0:
            raise ValueError("diffusion rate mu must be positive everywhere")
        if self.mu.grid != self.P.grid:
            raise ValueError("mu and P live on different grids")
        if self.P_faces is not None:
            pf = np.array(self.P_faces, dtype=float)
            if pf.shape != (self.grid.nx + 1, self.grid.nt) or not np.all(np.isfinite(pf)):
                raise ValueError("P_faces must be finite with shape (nx + 1, nt)")
            pf.setflags(write=False)
            object.__setattr__(self, "P_faces", pf)

    @property
    def grid(self) -> Grid:
        return self.mu.grid

    def drift_faces(self) -> np.ndarray:
        """Face velocities used by the flux operator."""
        return self.P_faces if self.P_faces is not None else face_average(self.P.values)

    @classmethod
    def diffusion(cls, grid: Grid, mu: float, label: str | None = None) -> "Strategy":
        return cls(
            SpaceTimeField.constant(grid, mu, positive=True, name="mu"),
            SpaceTimeField.constant(grid, 0.0, name="P"),
            label or f"diffusion({mu:g})",
        )

    def write(self, stem) -> None:
        """CSV fields ``<stem>_mu.csv``, ``<stem>_P.csv`` and a JSON sidecar."""
        write_field_csv(f"{stem}_mu.csv", self.mu)
        write_field_csv(f"{stem}_P.csv", self.P)
        with open(f"{stem}.json", "w") as fh:
            json.dump({"label": self.label, **self.meta}, fh, indent=2, sort_keys=True)


@dataclass(frozen=True)
class PeriodicPath:
    grid: Grid
    gamma: np.ndarray
    modes: int
    delta_margin: float
    integral: float = float("nan")
    raw_integral: float = float("nan")

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        if g.shape != (self.grid.nt,):
            raise ValueError("path must have one position per time node")
        if g.min() < self.delta_margin or g.max() > self.grid.L - self.delta_margin:
            raise ValueError("path leaves the interior band [delta, L - delta]")
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)

    def reversed_time(self) -> "PeriodicPath":
        idx = (-np.arange(self.grid.nt)) % self.grid.nt
        return PeriodicPath(self.grid, self.gamma[idx], self.modes, self.delta_margin,
                            self.integral, self.raw_integral)

    @classmethod
    def static(cls, grid: Grid, x0: float, delta_margin: float = 0.0) -> "PeriodicPath":
        return cls(grid, np.full(grid.nt, float(x0)), 0, delta_margin)


@dataclass(frozen=True)
class PoissonResult:
    q: SpaceTimeField
    qx_faces: np.ndarray  # (nx + 1, nt), zero on both boundary faces
    compat_defect: float


def solve_neumann_poisson(rhs: SpaceTimeField, tol: float = 1e-8) -> PoissonResult:
    """q_xx = rhs on [0, L] with q_x = 0 at both ends and zero spatial mean, for each t."""
    grid = rhs.grid
    h = grid.h
    means = rhs.values.mean(axis=0)
    defect = float(np.max(np.abs(means)))
    if defect > tol:
        j = int(np.argmax(np.abs(means)))
        raise CompatibilityError(
            f"Neumann compatibility violated: spatial mean of rhs is {means[j]:.3g} at t={grid.t[j]:.6g}",
            worst_t=float(grid.t[j]), defect=defect,
        )
    f = rhs.values - means[None, :]
    qx = np.zeros((grid.nx + 1, grid.nt))
    qx[1:] = h * np.cumsum(f, axis=0)
    qx[-1] = 0.0  # exact by compatibility, pin roundoff
    q = np.zeros((grid.nx, grid.nt))
    q[1:] = h * np.cumsum(qx[1:-1], axis=0)
    q -= q.mean(axis=0)[None, :]
    return PoissonResult(SpaceTimeField(grid, q, name="q"), qx, defect)


def ifd_face_velocity(Ktilde: SpaceTimeField, mu: SpaceTimeField, qx_faces: np.ndarray) -> np.ndarray:
    """(mu dK~/dx - dq/dx) / K~ on every face; boundary faces by linear extrapolation."""
    h = Ktilde.grid.h
    Kt = Ktilde.values
    mu_f = 0.5 * (mu.values[1:] + mu.values[:-1])
    K_f = 0.5 * (Kt[1:] + Kt[:-1])
    dK = (Kt[1:] - Kt[:-1]) / h
    P = np.empty((Kt.shape[0] + 1, Kt.shape[1]))
    P[1:-1] = (mu_f * dK - qx_faces[1:-1]) / K_f
    P[0] = 2.0 * P[1] - P[2]
    P[-1] = 2.0 * P[-2] - P[-3]
    return P


def construct_ifd_strategy(env: Environment, mu: SpaceTimeField, sol=None, eps_feas: float = 1e-9,
                           compat_tol: float = 1e-8) -> Strategy:
    """Advection that makes M(t) K~(x, t) the periodic state for diffusion rate ``mu``."""
    sol = solve_M(env) if sol is None else sol
    report = check_feasibility(env, sol, eps_feas)
    if not report.feasible:
        raise InfeasibleEnvironmentError(
            f"environment is infeasible: min(r - M'/M) = {report.margin:.6g} at x={report.argmin[0]:.6g}, "
            f"t={report.argmin[1]:.6g}",
            report,
        )
    Kt = compute_Ktilde(env, sol)
    pois = solve_neumann_poisson(time_derivative(Kt), compat_tol)
    P_faces = ifd_face_velocity(Kt, mu, pois.qx_faces)
    P = SpaceTimeField(env.grid, 0.5 * (P_faces[1:] + P_faces[:-1]), name="P*")
    check_peclet(mu, P, "ifd strategy")
    return Strategy(mu, P, "ifd", {"compat_defect": pois.compat_defect}, P_faces=P_faces)


def _interp_path(F: np.ndarray, x: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    return np.array([np.interp(gamma[j], x, F[:, j]) for j in range(F.shape[1])])


def path_integral(F: SpaceTimeField, gamma: np.ndarray) -> float:
    """Periodic trapezoid rule for the integral of F(gamma(t), t) dt, F linear in x."""
    return float(_interp_path(F.values, F.grid.x, gamma).sum() * F.grid.tau)


def extract_invasion_path(F: SpaceTimeField, modes: int = 5, delta_margin: float | None = None,
                          require_positive: bool = True) -> PeriodicPath:
    """Smoothed argmax path of a fitness field with positive path integral.

    The raw per-time argmax is low-pass filtered to its lowest ``modes``
    Fourier coefficients and clamped to [delta, L - delta]. With
    ``require_positive=False`` a nonpositive integral is returned instead of
    raising, which lets a pipeline probe residents whose fitness is flat.
    """
    F = getattr(F, "F", F)
    grid = F.grid
    delta = 0.05 * grid.L if delta_margin is None else float(delta_margin)
    # np.argmax returns the first maximizer, i.e. ties go to smaller x
    raw = grid.x[np.argmax(F.values, axis=0)]
    raw_integral = float(F.values.max(axis=0).sum() * grid.tau)
    coef = np.fft.rfft(raw)
    coef[modes:] = 0.0
    gamma = np.fft.irfft(coef, n=grid.nt)
    gamma = np.clip(gamma, delta, grid.L - delta)
    achieved = path_integral(F, gamma)
    # quadrature roundoff of an x-independent field is not a gain
    floor = 1e-12 * grid.T * (1.0 + float(np.abs(F.values).max()))
    if require_positive and not achieved > floor:
        raise PathError(
            f"smoothed path integral {achieved:.3g} is not positive (raw argmax integral {raw_integral:.3g}); "
            "the resident looks ideal free, or more modes are needed",
            raw_integral, achieved,
        )
    return PeriodicPath(grid, gamma, modes, delta, achieved, raw_integral)


def construct_pursuit_invader(path: PeriodicPath, alpha: float, mu: float = 1.0) -> Strategy:
    """Constant diffusion with advection alpha (gamma(t) - x) toward the path."""
    if alpha < 0 or mu <= 0:
        raise ValueError("need alpha >= 0 and mu > 0")
    grid = path.grid
    P = alpha * (path.gamma[None, :] - grid.x[:, None])
    return Strategy(
        SpaceTimeField.constant(grid, mu, positive=True, name="mu"),
        SpaceTimeField(grid, P, name="Q"),
        f"pursuit({alpha:g})",
        {"alpha": alpha, "mu": mu, "modes": path.modes, "delta_margin": path.delta_margin},
    )


def pursuit_potential(path: PeriodicPath) -> SpaceTimeField:
    """m(x, t) = -(x - gamma(t))^2 / 2, whose x-gradient is gamma - x."""
    grid = path.grid
    return SpaceTimeField(grid, -0.5 * (grid.x[:, None] - path.gamma[None, :]) ** 2, name="m")
