import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifdlab.bernoulli import compute_Ktilde, define_ifd_profile, solve_M
from ifdlab.dynamics import find_periodic_orbit
from ifdlab.fitness import (
    TOL_SIMULATED,
    fitness_field,
    is_ifd,
    path_fitness_bounds,
    pathwise_fitness,
    space_time_integral,
)
from ifdlab.mesh import Grid, SpaceTimeField
from ifdlab.strategy import PeriodicPath, Strategy, construct_ifd_strategy, extract_invasion_path

from .conftest import ENVIRONMENTS, env_from, make_env


def ifd_theta(env):
    sol = solve_M(env)
    return sol, define_ifd_profile(sol, compute_Ktilde(env, sol))


class TestFitnessField:
    def test_capacity_gives_zero(self):
        env = make_env("G", 32, 32)
        ff = fitness_field(env, env.K)
        assert np.all(ff.F.values == 0) and is_ifd(ff)

    def test_empty_gives_r(self):
        env = make_env("G", 32, 32)
        ff = fitness_field(env, SpaceTimeField.constant(env.grid, 0.0))
        np.testing.assert_array_equal(ff.F.values, env.r.values)

    @pytest.mark.parametrize("name", sorted(ENVIRONMENTS))
    def test_ifd_profile(self, name):
        env = make_env(name)
        sol, theta = ifd_theta(env)
        ff = fitness_field(env, theta)
        assert np.abs(ff.F.values - sol.logderiv.values[None, :]).max() < 1e-9
        assert is_ifd(ff)
        lo, hi = path_fitness_bounds(ff)
        assert abs(lo) < 1e-9 and abs(hi) < 1e-9

    def test_grid_mismatch(self):
        env = make_env("A", 16, 16)
        with pytest.raises(ValueError):
            fitness_field(env, SpaceTimeField.constant(Grid(nx=8, nt=16), 1.0))

    def test_json(self):
        env = make_env("A", 16, 16)
        js = fitness_field(env, env.K).to_json()
        assert set(js) == {"flatness", "path_inf", "path_sup", "F_min", "F_max"}


class TestVerdict:
    @pytest.mark.parametrize("name", ["A", "B", "C", "G", "J"])
    def test_diffusion_orbit_not_ifd(self, name):
        env = make_env(name, 32, 32)
        orbit = find_periodic_orbit(env, [Strategy.diffusion(env.grid, 1.0)], env.K.values[:, :1].T)
        ff = fitness_field(env, orbit.total())
        assert not is_ifd(ff, TOL_SIMULATED)
        lo, hi = path_fitness_bounds(ff)
        assert hi > 0 > lo

    def test_simulated_ifd_orbit(self):
        env = make_env("B", 64, 64)
        s = construct_ifd_strategy(env, SpaceTimeField.constant(env.grid, 1.0, positive=True))
        orbit = find_periodic_orbit(env, [s], env.K.values[:, :1].T)
        ff = fitness_field(env, orbit.total())
        assert is_ifd(ff, TOL_SIMULATED)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10**6), st.floats(1e-4, 1.0))
    def test_equivalence_with_bounds(self, seed, scale):
        g = Grid(nx=8, nt=8)
        rng = np.random.default_rng(seed)
        F = SpaceTimeField(g, rng.standard_normal(g.nt)[None, :] + scale * rng.standard_normal((g.nx, g.nt)))
        tol = 0.5
        lo, hi = path_fitness_bounds(F)
        flat = F.values.max(axis=0) - F.values.min(axis=0)
        assert is_ifd(F, tol) == (flat.max() < tol * (1 + np.abs(F.values).max()))
        assert hi - lo == pytest.approx(flat.sum() * g.tau)


class TestPathwise:
    def test_ifd_any_path(self):
        env = make_env("H", 64, 64)
        _, theta = ifd_theta(env)
        ff = fitness_field(env, theta)
        g = env.grid
        for gamma in (np.full(g.nt, 0.3), 0.5 + 0.3 * np.sin(2 * np.pi * g.t)):
            assert abs(pathwise_fitness(ff, gamma)) < 1e-9

    def test_static(self):
        g = Grid(nx=64, nt=16, T=2.0)
        f = np.cos(np.pi * g.x)
        F = SpaceTimeField(g, np.tile(f[:, None], (1, g.nt)))
        path = PeriodicPath.static(g, g.x[10])
        assert pathwise_fitness(F, path) == pytest.approx(g.T * f[10], rel=1e-14)

    def test_oscillating(self):
        errs = []
        for n in (64, 128):
            g = Grid(1.0, n, 1.0, n)
            c = 0.3
            F = SpaceTimeField(g, (g.x[:, None] - 0.5) * np.sin(2 * np.pi * g.t)[None, :])
            gamma = 0.5 + c * np.sin(2 * np.pi * g.t)
            errs.append(abs(pathwise_fitness(F, gamma) - c * g.T / 2))
        assert max(errs) < 1e-12  # F is linear in x, interpolation exact

    def test_flat_bounds(self):
        g = Grid(nx=8, nt=16)
        F = SpaceTimeField(g, np.tile(np.cos(2 * np.pi * g.t) + 0.2, (g.nx, 1)))
        lo, hi = path_fitness_bounds(F)
        assert lo == pytest.approx(hi) and lo == pytest.approx(0.2)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 8))
    def test_sandwich(self, seed, modes):
        g = Grid(nx=16, nt=16)
        rng = np.random.default_rng(seed)
        F = SpaceTimeField(g, rng.standard_normal((g.nx, g.nt)))
        gamma = extract_invasion_path(F, modes=modes, require_positive=False).gamma
        gamma = np.clip(gamma + 0.1 * rng.standard_normal(g.nt), g.x[0], g.x[-1])
        lo, hi = path_fitness_bounds(F)
        val = pathwise_fitness(F, gamma)
        slack = 1e-9 * g.T * np.abs(F.values).max()
        assert lo - slack <= val <= hi + slack

    def test_unweighted_integral_logged(self):
        env = make_env("A", 32, 32)
        orbit = find_periodic_orbit(env, [Strategy.diffusion(env.grid, 1.0)], env.K.values[:, :1].T)
        assert np.isfinite(space_time_integral(fitness_field(env, orbit.total())))


def test_constant_environment_is_ifd():
    env = env_from("2", "3")
    assert is_ifd(fitness_field(env, env.K))
