"""Space-time grid, sampled fields and the conservative flux operator.

Cells are centered at x_i = (i + 1/2) h on [0, L]; time nodes are
t_j = j tau on the period [0, T). Field arrays are indexed ``[i, j]``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from . import exprfield

log = logging.getLogger(__name__)


class FieldError(ValueError):
    pass


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class Grid:
    L: float = 1.0
    nx: int = 64
    T: float = 1.0
    nt: int = 64

    def __post_init__(self):
        if self.nx < 8 or self.nt < 8:
            raise ValueError("nx and nt must be at least 8")
        if not (self.L > 0 and self.T > 0):
            raise ValueError("L and T must be positive")
        if not (_is_pow2(self.nx) and _is_pow2(self.nt)):
            log.warning("grid sizes nx=%d, nt=%d are not powers of two", self.nx, self.nt)

    @property
    def h(self) -> float:
        return self.L / self.nx

    @property
    def tau(self) -> float:
        return self.T / self.nt

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.h

    @property
    def x_faces(self) -> np.ndarray:
        return np.arange(self.nx + 1) * self.h

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.nt) * self.tau

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.L, self.nx * factor, self.T, self.nt * factor)

    def with_size(self, nx: int, nt: int) -> "Grid":
        return Grid(self.L, nx, self.T, nt)


@dataclass(frozen=True)
class SpaceTimeField:
    grid: Grid
    values: np.ndarray
    positive: bool = False
    name: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.nx, self.grid.nt):
            raise FieldError(f"field {self.name!r} has shape {v.shape}, expected {(self.grid.nx, self.grid.nt)}")
        if not np.all(np.isfinite(v)):
            raise FieldError(f"field {self.name!r} has non-finite entries")
        if self.positive and v.min() <= 0:
            i, j = np.unravel_index(np.argmin(v), v.shape)
            raise FieldError(
                f"field {self.name!r} must be positive; min {v.min():.6g} at x={self.grid.x[i]:.6g}, t={self.grid.t[j]:.6g}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid, c: float, **kw) -> "SpaceTimeField":
        return cls(grid, np.full((grid.nx, grid.nt), float(c)), **kw)

    @classmethod
    def from_function(cls, grid: Grid, f, **kw) -> "SpaceTimeField":
        X, Tt = np.meshgrid(grid.x, grid.t, indexing="ij")
        return cls(grid, np.broadcast_to(f(X, Tt), (grid.nx, grid.nt)), **kw)

    def with_values(self, values, **kw) -> "SpaceTimeField":
        kw.setdefault("name", self.name)
        return SpaceTimeField(self.grid, values, **kw)

    def reversed_time(self) -> "SpaceTimeField":
        """f(x, T - t) by index reflection j -> -j mod nt."""
        idx = (-np.arange(self.grid.nt)) % self.grid.nt
        return SpaceTimeField(self.grid, self.values[:, idx], self.positive, self.name)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True)
class PeriodicScalar:
    grid: Grid
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.nt,):
            raise FieldError(f"periodic scalar {self.name!r} has shape {v.shape}, expected ({self.grid.nt},)")
        if not np.all(np.isfinite(v)):
            raise FieldError(f"periodic scalar {self.name!r} has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def integral(self) -> float:
        """Periodic trapezoid rule over one period."""
        return float(self.values.sum() * self.grid.tau)


@dataclass(frozen=True)
class Environment:
    """Habitat data: growth rate r(x, t) and carrying capacity K(x, t)."""

    grid: Grid
    r: SpaceTimeField
    K: SpaceTimeField
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        for name in ("r", "K"):
            f = getattr(self, name)
            if f.grid != self.grid:
                raise FieldError(f"{name} lives on a different grid")
            if f.min() <= 0:
                raise FieldError(f"{name} must be positive everywhere (min {f.min():.6g})")


# --- operations ------------------------------------------------------------


def default_params(grid: Grid, params: Mapping[str, float] | None = None) -> dict:
    out = {"L": grid.L, "T": grid.T}
    if params:
        out.update(params)
    return out


def sample(e, grid: Grid, params: Mapping[str, float] | None = None, **kw) -> SpaceTimeField:
    """Evaluate an expression (tree or source text) at every grid node.

    ``L`` and ``T`` are bound as parameters unless ``params`` overrides them.
    """
    if isinstance(e, str):
        e = exprfield.parse(e)
    X, Tt = np.meshgrid(grid.x, grid.t, indexing="ij")
    try:
        values = exprfield.evaluate_array(e, X, Tt, default_params(grid, params))
    except exprfield.NonFiniteError as err:
        i, j = err.index
        raise exprfield.NonFiniteError(
            f"{err.subexpr} (at i={i}, j={j}: x={grid.x[i]!r}, t={grid.t[j]!r})", err.value
        ) from None
    return SpaceTimeField(grid, values, **kw)


def space_mean(f: SpaceTimeField) -> PeriodicScalar:
    return PeriodicScalar(f.grid, f.values.mean(axis=0), name=f"mean({f.name})")


def time_integral(f: SpaceTimeField) -> np.ndarray:
    """Per-cell periodic rectangle rule over one period."""
    return f.values.sum(axis=1) * f.grid.tau


def _angular_frequencies(n: int, T: float) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(n, d=T / n)


def spectral_derivative(values: np.ndarray, T: float, axis: int = -1) -> np.ndarray:
    """Fourier differentiation of periodic samples along ``axis``.

    The Nyquist mode (even n) is dropped, the usual convention for odd
    derivatives of real data.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    k = _angular_frequencies(n, T)
    if n % 2 == 0:
        k[n // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    coef = np.fft.fft(values, axis=axis) * (1j * k).reshape(shape)
    return np.fft.ifft(coef, axis=axis).real


def time_derivative(f: SpaceTimeField) -> SpaceTimeField:
    return SpaceTimeField(f.grid, spectral_derivative(f.values, f.grid.T, axis=1), name=f"d/dt {f.name}")


def upsample_time(values: np.ndarray, factor: int, axis: int = 0) -> np.ndarray:
    """Trigonometric interpolation of periodic samples onto ``factor`` times as many nodes."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    if factor == 1:
        return values.copy()
    m = n * factor
    coef = np.fft.rfft(values, axis=axis)
    pad_shape = list(coef.shape)
    pad_shape[axis] = m // 2 + 1
    padded = np.zeros(pad_shape, dtype=complex)
    sl = [slice(None)] * values.ndim
    sl[axis] = slice(0, coef.shape[axis])
    padded[tuple(sl)] = coef
    if n % 2 == 0:
        # split the Nyquist coefficient symmetrically (cosine interpretation)
        sl[axis] = n // 2
        padded[tuple(sl)] *= 0.5
    return np.fft.irfft(padded, n=m, axis=axis) * factor


def face_average(values: np.ndarray) -> np.ndarray:
    """Arithmetic mean of adjacent cells along axis 0; boundary faces copy the edge cell."""
    values = np.asarray(values, dtype=float)
    out = np.empty((values.shape[0] + 1,) + values.shape[1:])
    out[1:-1] = 0.5 * (values[1:] + values[:-1])
    out[0] = values[0]
    out[-1] = values[-1]
    return out


def peclet_number(mu: SpaceTimeField, P: SpaceTimeField) -> float:
    """Largest cell Peclet number |P| h / (2 mu) over interior faces."""
    mu_f = face_average(mu.values)[1:-1]
    p_f = face_average(P.values)[1:-1]
    return float(np.max(np.abs(p_f) * mu.grid.h / (2.0 * mu_f)))


def check_peclet(mu: SpaceTimeField, P: SpaceTimeField, what: str = "strategy") -> float:
    pe = peclet_number(mu, P)
    if pe >= 1.0:
        log.warning("%s: cell Peclet number %.3g >= 1; central advection may lose positivity", what, pe)
    return pe


def divergence_flux_operator(mu: SpaceTimeField, P: SpaceTimeField, j: int) -> sp.csr_matrix:
    """Matrix of theta -> d/dx [mu theta_x - P theta] at time node ``j`` with no-flux ends."""
    if mu.min() <= 0:
        raise FieldError("diffusion rate mu must be positive")
    grid = mu.grid
    h = grid.h
    mu_f = 0.5 * (mu.values[1:, j] + mu.values[:-1, j])
    p_f = 0.5 * (P.values[1:, j] + P.values[:-1, j])
    # J_{i+1/2} = cm * theta_i + cp * theta_{i+1}
    cm = -mu_f / h - 0.5 * p_f
    cp = mu_f / h - 0.5 * p_f
    nx = grid.nx
    diag = np.zeros(nx)
    upper = np.zeros(nx - 1)
    lower = np.zeros(nx - 1)
    # row i gets +J_{i+1/2}/h and -J_{i-1/2}/h
    diag[:-1] += cm / h
    upper += cp / h
    diag[1:] -= cp / h
    lower -= cm / h
    return sp.diags([lower, diag, upper], [-1, 0, 1], format="csr")


def advection_diffusion_operator(mu: SpaceTimeField, drift: SpaceTimeField, j: int) -> sp.csr_matrix:
    """Matrix of phi -> d/dx[mu phi_x] + b phi_x at time node ``j`` with zero-gradient ends.

    This is exactly the transpose of ``divergence_flux_operator(mu, drift, j)``,
    so primal and adjoint problems share their spectrum on the grid.
    """
    return divergence_flux_operator(mu, drift, j).T.tocsr()


def apply_flux_divergence(theta: np.ndarray, mu: SpaceTimeField, P: SpaceTimeField,
                          P_faces: np.ndarray | None = None) -> np.ndarray:
    """Apply the flux operator at every time node; ``theta`` has shape (nx, nt).

    Face velocities are central averages of ``P`` unless ``P_faces``
    (shape (nx + 1, nt)) supplies them directly.
    """
    h = mu.grid.h
    mu_f = 0.5 * (mu.values[1:] + mu.values[:-1])
    p_f = 0.5 * (P.values[1:] + P.values[:-1]) if P_faces is None else P_faces[1:-1]
    J = np.zeros((mu.grid.nx + 1, mu.grid.nt))
    J[1:-1] = mu_f * (theta[1:] - theta[:-1]) / h - p_f * 0.5 * (theta[1:] + theta[:-1])
    return (J[1:] - J[:-1]) / h


# --- CSV -------------------------------------------------------------------


def write_field_csv(path, f: SpaceTimeField) -> None:
    g = f.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "t", "value"])
        for i in range(g.nx):
            for j in range(g.nt):
                w.writerow([f"{g.x[i]:.17g}", f"{g.t[j]:.17g}", f"{f.values[i, j]:.17g}"])


def read_field_csv(path, grid: Grid, **kw) -> SpaceTimeField:
    values = np.empty((grid.nx, grid.nt))
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        if header != ["x", "t", "value"]:
            raise FieldError(f"unexpected CSV header {header}")
        n = 0
        for n, row in enumerate(rows, start=1):
            i, j = divmod(n - 1, grid.nt)
            values[i, j] = float(row[2])
    if n != grid.nx * grid.nt:
        raise FieldError(f"CSV has {n} rows, expected {grid.nx * grid.nt}")
    return SpaceTimeField(grid, values, **kw)


def convergence_order(errors, sizes) -> np.ndarray:
    """Observed orders log(e_k / e_{k+1}) / log(n_{k+1} / n_k) between successive levels."""
    e = np.asarray(errors, dtype=float)
    n = np.asarray(sizes, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(n[1:] / n[:-1])
