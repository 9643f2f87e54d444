import numpy as np
import pytest

from ifdlab.mesh import Environment, Grid, sample

# smooth heterogeneous environments on [0, L] x [0, T); all feasible
ENVIRONMENTS = {
    "A": ("1 + 0.3*cos(pi*x/L) + 0.2*sin(2*pi*t/T)", "1 + 0.4*cos(pi*x/L)*(1+0.3*sin(2*pi*t/T))"),
    "B": ("2 + sin(2*pi*t/T)*cos(pi*x/L)", "exp(0.5*cos(pi*x/L))*(1 + 0.5*sin(2*pi*t/T))"),
    "C": ("1.5 + 0.5*cos(2*pi*x/L)", "1.2 + 0.5*sin(2*pi*t/T)*x/L + 0.3*cos(pi*x/L)"),
    "D": ("3", "2 + cos(pi*x/L + 2*pi*t/T)"),
    "E": ("1 + x/L", "1"),
    "F": ("1", "1 + 0.5*x/L*(1+0.5*cos(2*pi*t/T))"),
    "G": ("0.5 + exp(-(x/L-0.3)^2/0.05)", "1 + 0.8*tanh(5*(x/L-0.5))*sin(2*pi*t/T)^2"),
    "H": ("2 + 0.5*sin(4*pi*t/T)", "1 + 0.5*sin(2*pi*t/T) + 0.3*cos(pi*x/L)"),
    "I": ("1 + 0.5*cos(pi*x/L)^2", "1 + 0.3*sin(2*pi*t/T)*cos(3*pi*x/L)"),
    "J": ("4", "exp(2*cos(pi*x/L))*(1+0.5*sin(2*pi*t/T))"),
}


def make_env(name, nx=64, nt=64, L=1.0, T=1.0):
    r, K = ENVIRONMENTS[name]
    g = Grid(L, nx, T, nt)
    return Environment(g, sample(r, g, positive=True, name="r"), sample(K, g, positive=True, name="K"))


def env_from(r, K, nx=32, nt=32, L=1.0, T=1.0):
    g = Grid(L, nx, T, nt)
    return Environment(g, sample(r, g, positive=True, name="r"), sample(K, g, positive=True, name="K"))


@pytest.fixture
def env_a():
    return make_env("A")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the test summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
