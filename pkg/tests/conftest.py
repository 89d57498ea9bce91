from pathlib import Path

import numpy as np
import pytest

from discounted_empc import dp
from discounted_empc.dissipativity import analyze_grid
from discounted_empc.lqr import solve_dare
from discounted_empc.model import lqr_example, nonlinear_example

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"

# storage matrix printed for the 2-state example at gamma = 0.334
PRINTED_LAMBDA = -np.array([[3.9511, 1.2702], [1.2702, 2.7738]])


@pytest.fixture(scope="session")
def lq():
    return lqr_example(0.334)


@pytest.fixture(scope="session")
def lq_riccati(lq):
    return solve_dare(lq)


@pytest.fixture(scope="session")
def scalar09():
    return nonlinear_example(0.9)


@pytest.fixture(scope="session")
def vi09(scalar09):
    """Value iteration at the default tolerance."""
    return dp.value_iteration(scalar09)


@pytest.fixture(scope="session")
def analysis09(scalar09):
    """Tight-tolerance analysis: value, steady state, storage, normalization."""
    return analyze_grid(scalar09)


@pytest.fixture(scope="session")
def configs():
    return CONFIGS


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
