"""Periodic envelope M(t), transformed carrying capacity and feasibility.

M is the positive T-periodic solution of M'/M + b M = a with
a = mean(K) / mean(K/r) and b = 1 / mean(K/r). Writing w = 1/M turns this
into the linear equation w' = b - a w, whose periodic solution has the
closed form

    w(t) = exp(-A(t)) I(T) / (1 - exp(-A(T))) + I(t),
    A(t) = int_0^t a,   I(t) = int_0^t b(s) exp(A(s) - A(t)) ds.

Both integrals are evaluated spectrally from the nt samples: A is the
linear part mean(a) t plus the Fourier antiderivative of a - mean(a), and
I integrates each Fourier mode of b exp(A - mean(a) t) against
exp(mean(a) s) in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Environment, Grid, PeriodicScalar, SpaceTimeField, spectral_derivative


class InfeasibleEnvironmentError(ValueError):
    """The environment admits no ideal free distribution on this grid."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class BernoulliError(ArithmeticError):
    pass


@dataclass(frozen=True)
class BernoulliSolution:
    M: PeriodicScalar
    logderiv: PeriodicScalar
    a: PeriodicScalar
    b: PeriodicScalar
    residual: float

    @property
    def grid(self) -> Grid:
        return self.M.grid

    def to_json(self) -> dict:
        return {
            "residual": self.residual,
            "M_min": float(self.M.values.min()),
            "M_max": float(self.M.values.max()),
            "logderiv_integral": self.logderiv.integral(),
        }


@dataclass(frozen=True)
class FeasibilityReport:
    margin: float
    feasible: bool
    argmin: tuple
    eps: float = 1e-9

    def to_json(self) -> dict:
        return {
            "margin": self.margin,
            "feasible": self.feasible,
            "argmin": {"x": self.argmin[0], "t": self.argmin[1]},
            "eps_feas": self.eps,
        }


def _fourier_modes(n: int, T: float):
    """Complex coefficients' angular frequencies with the Nyquist mode split."""
    return 2.0 * np.pi * np.fft.fftfreq(n, d=T / n)


def _periodic_antiderivative(values: np.ndarray, T: float) -> np.ndarray:
    """Periodic antiderivative of zero-mean samples, vanishing at t = 0."""
    n = values.shape[-1]
    k = _fourier_modes(n, T)
    c = np.fft.fft(values)
    c[0] = 0.0
    if n % 2 == 0:
        c[n // 2] = 0.0
    nz = k != 0
    c[nz] /= 1j * k[nz]
    out = np.fft.ifft(c).real
    return out - out[0]


def envelope_from_coefficients(a: np.ndarray, b: np.ndarray, T: float):
    """Periodic M solving M'/M + b M = a, sampled on len(a) uniform nodes of [0, T).

    Returns ``(M, w)`` with ``w = 1/M``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.size
    t = np.arange(n) * (T / n)
    abar = a.mean()
    if not abar > 0:
        raise BernoulliError(f"mean of a(t) must be positive, got {abar}")
    decay = np.exp(-abar * T)
    if decay >= 1.0:
        raise BernoulliError("exp(-int_0^T a) >= 1; internal consistency failure")
    A_per = _periodic_antiderivative(a - abar, T)  # A(t) = abar t + A_per(t)
    # b(s) exp(A(s)) = exp(abar s) g(s) with g periodic
    g = b * np.exp(A_per)
    k = _fourier_modes(n, T)
    gc = np.fft.fft(g) / n
    if n % 2 == 0:
        # cosine interpretation of the Nyquist mode: half at +k, half at -k
        ny = n // 2
        k = np.append(k, -k[ny])
        gc = np.append(gc, 0.5 * gc[ny])
        gc[ny] *= 0.5
    z = abar + 1j * k
    # I(t) = exp(-A(t)) sum_k gc_k (exp(z_k t) - 1) / z_k
    #      = sum_k gc_k (exp(i k t - A_per(t)) - exp(-A(t))) / z_k
    phase = np.exp(1j * np.outer(t, k) - A_per[:, None])
    decay_t = np.exp(-(abar * t + A_per))
    I = ((phase - decay_t[:, None]) * (gc / z)[None, :]).sum(axis=1).real
    # I(T): exp(i k T) = 1 and A_per(T) = A_per(0) = 0
    I_T = (gc * (1.0 - decay) / z).sum().real
    w = decay_t * I_T / (1.0 - decay) + I
    if np.any(w <= 0):
        raise BernoulliError("envelope lost positivity; coefficients too rough for this grid")
    return 1.0 / w, w


def bernoulli_coefficients(env: Environment):
    """a(t) = mean(K) / mean(K/r) and b(t) = 1 / mean(K/r)."""
    Kbar = env.K.values.mean(axis=0)
    Kr = (env.K.values / env.r.values).mean(axis=0)
    return Kbar / Kr, 1.0 / Kr


def _solution(grid: Grid, a: np.ndarray, b: np.ndarray) -> BernoulliSolution:
    M, _ = envelope_from_coefficients(a, b, grid.T)
    logderiv = a - b * M
    # independent check: spectral derivative of log M against the equation
    residual = float(np.max(np.abs(spectral_derivative(np.log(M), grid.T) + b * M - a)))
    return BernoulliSolution(
        M=PeriodicScalar(grid, M, "M"),
        logderiv=PeriodicScalar(grid, logderiv, "M'/M"),
        a=PeriodicScalar(grid, a, "a"),
        b=PeriodicScalar(grid, b, "b"),
        residual=residual,
    )


def solve_M(env: Environment) -> BernoulliSolution:
    if env.r.min() <= 0 or env.K.min() <= 0:
        raise ValueError("r and K must be positive")
    a, b = bernoulli_coefficients(env)
    return _solution(env.grid, a, b)


def solve_M_coefficients(grid: Grid, a, b) -> BernoulliSolution:
    """Envelope for directly supplied coefficient samples (testing and remark_d)."""
    return _solution(grid, np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def compute_Ktilde(env: Environment, sol: BernoulliSolution) -> SpaceTimeField:
    """K~ = K/M - (K/r) (M'/M) / M; tagged positive only when it is."""
    M = sol.M.values[None, :]
    ld = sol.logderiv.values[None, :]
    Kt = env.K.values / M - (env.K.values / env.r.values) * ld / M
    return SpaceTimeField(env.grid, Kt, positive=bool(Kt.min() > 0), name="Ktilde")


def feasibility_margins(env: Environment, sol: BernoulliSolution) -> np.ndarray:
    """Pointwise r - M'/M; positive everywhere iff an IFD exists."""
    return env.r.values - sol.logderiv.values[None, :]


def feasibility_margins_r3(env: Environment, sol: BernoulliSolution) -> np.ndarray:
    """Pointwise slack of the equivalent form written with K - mean(K) and (K/r)/mean(K/r)."""
    K = env.K.values
    Kr = K / env.r.values
    Kbar = K.mean(axis=0)[None, :]
    Krbar = Kr.mean(axis=0)[None, :]
    M = sol.M.values[None, :]
    lhs = (K - Kbar) / M
    rhs = Kbar / M * (Kr / Krbar - 1.0) - Kr / Krbar
    return lhs - rhs


def check_feasibility(env: Environment, sol: BernoulliSolution, eps: float = 1e-9) -> FeasibilityReport:
    m = feasibility_margins(env, sol)
    i, j = np.unravel_index(int(np.argmin(m)), m.shape)
    margin = float(m[i, j])
    return FeasibilityReport(
        margin=margin,
        feasible=margin > eps,
        argmin=(float(env.grid.x[i]), float(env.grid.t[j])),
        eps=eps,
    )


def define_ifd_profile(sol: BernoulliSolution, Ktilde: SpaceTimeField) -> SpaceTimeField:
    """theta*(x, t) = M(t) K~(x, t)."""
    if Ktilde.min() <= 0:
        raise InfeasibleEnvironmentError(
            f"K~ is not positive (min {Ktilde.min():.6g}); no ideal free distribution exists"
        )
    return SpaceTimeField(Ktilde.grid, sol.M.values[None, :] * Ktilde.values, positive=True, name="theta*")


class CounterexampleError(ValueError):
    def __init__(self, message, margin_profile=None):
        super().__init__(message)
        self.margin_profile = margin_profile


def remark_d_counterexample(rho: PeriodicScalar, amplitude: float | None = None, tol: float = 1e-3):
    """Environment with r = K whose feasibility test fails.

    M solves M'/M + M = rho. The returned environment is
    r = K = rho(t) (1 + amplitude cos(pi x / L)), whose spatial mean is rho,
    so its own envelope is this M. Its minimum over x, about
    rho (1 - amplitude), drops below M'/M = rho - M exactly when
    amplitude rho > M, which is possible at times where M'/M > 0.

    With ``amplitude=None`` a bisection finds the smallest amplitude whose
    margin profile changes sign by at least ``tol`` either way, and the
    result is moved a quarter of the way toward 1 so the sign change is not
    marginal.

    Returns ``(environment, amplitude, margin_profile)`` where the profile is
    min_x r(x, t) - M'/M(t).
    """
    grid = rho.grid
    rv = rho.values
    if rv.min() <= 0:
        raise ValueError("rho must be positive")
    if np.ptp(rv) <= 1e-12 * max(1.0, np.abs(rv).max()):
        raise CounterexampleError("rho is constant: M = rho and M'/M = 0, no sign change is possible")
    sol = solve_M_coefficients(grid, rv, np.ones_like(rv))
    ld = sol.logderiv.values
    shape = np.cos(np.pi * grid.x / grid.L)  # zero midpoint mean

    def profile(amp):
        return rv * (1.0 + amp * shape.min()) - ld

    def changes_sign(p, margin):
        return p.min() < -margin and p.max() > margin

    if amplitude is None:
        hi = 1.0 - 1e-9
        if not changes_sign(profile(hi), tol):
            raise CounterexampleError("no amplitude below 1 forces the sign change", profile(hi))
        lo = 0.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if changes_sign(profile(mid), tol):
                hi = mid
            else:
                lo = mid
        amplitude = hi + 0.25 * (1.0 - hi)
    if not 0.0 <= amplitude < 1.0:
        raise ValueError("amplitude must lie in [0, 1) to keep r positive")
    p = profile(amplitude)
    if not changes_sign(p, 0.0):
        raise CounterexampleError(
            f"amplitude {amplitude} does not force a sign change (margin range [{p.min():.4g}, {p.max():.4g}])", p
        )
    values = rv[None, :] * (1.0 + amplitude * shape[:, None])
    r = SpaceTimeField(grid, values, positive=True, name="r")
    K = SpaceTimeField(grid, values, positive=True, name="K")
    env = Environment(grid, r, K, meta={"kind": "remark_d", "amplitude": amplitude})
    return env, amplitude, p
