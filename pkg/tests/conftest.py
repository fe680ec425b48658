import math

import numpy as np
import pytest

from nhim.flow import Curve
from nhim.perron import PerronConfig, solve_manifold
from nhim.vf_model import parse_system

# x' = 1, y' = -y + eps*cos(x): invariant graph h(x) = eps/2 (cos x + sin x)
SOLVABLE = """\
# solvable test system
dim_x = 1
dim_y = 1
vx1 = 1
A11 = -1
f1 = 0.1*cos(x1)
"""

NONLINEAR = """\
dim_x = 1
dim_y = 1
vx1 = 1 + 0.1*sin(x1)*y1
A11 = -2 - cos(x1)
f1 = 0.1*cos(x1) + 0.05*y1^2
"""

ZERO_F = """\
dim_x = 1
dim_y = 1
vx1 = 1
A11 = -1
f1 = 0
"""

ACCEPTANCE_CFG = PerronConfig(horizon=30.0, step=1e-3, eta=0.5, tol=1e-10)


def exact_h(x, eps=0.1):
    return 0.5 * eps * (np.cos(x) + np.sin(x))


def random_curves(n, horizon, step, eta, seed, dy=1):
    """Smooth random curves with sup-norm at most eta."""
    rng = np.random.default_rng(seed)
    t = -horizon + step * np.arange(round(horizon / step) + 1)
    out = []
    for _ in range(n):
        amp = rng.uniform(-1, 1, (4, dy))
        freq = rng.uniform(0.1, 3.0, (4, 1))
        phase = rng.uniform(0, 2 * math.pi, (4, 1))
        v = sum(amp[k] * np.sin(freq[k] * t + phase[k])[:, None] for k in range(4))
        v *= eta * rng.uniform(0.2, 1.0) / np.abs(v).max()
        out.append(Curve(horizon, step, v))
    return out


@pytest.fixture(scope="session")
def solvable():
    return parse_system(SOLVABLE)


@pytest.fixture(scope="session")
def nonlinear():
    return parse_system(NONLINEAR)


@pytest.fixture(scope="session")
def zero_f():
    return parse_system(ZERO_F)


@pytest.fixture(scope="session")
def solvable_64(solvable):
    return solve_manifold(solvable, 64, ACCEPTANCE_CFG)


# acceptance lines are collected here and printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
