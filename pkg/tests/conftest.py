import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mveq import BrownianFunction, Constant, build_scenario, simulate_brownian  # noqa: E402


@pytest.fixture(scope="session")
def const_scenario():
    return build_scenario(Constant(0.03), Constant(0.08), Constant(0.2))


@pytest.fixture(scope="session")
def random_r_scenario():
    return build_scenario(BrownianFunction.tanh(0.02, 0.02), Constant(0.08), Constant(0.2))


@pytest.fixture(scope="session")
def random_all_scenario():
    return build_scenario(BrownianFunction.tanh(0.02, 0.02),
                          BrownianFunction.sin(0.08, 0.03),
                          BrownianFunction.cos(0.25, 0.05))


@pytest.fixture(scope="session")
def small_grid():
    return simulate_brownian(4000, 50, 1.0, seed=11)


@pytest.fixture(scope="session")
def mid_grid():
    return simulate_brownian(20000, 100, 1.0, seed=12)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
