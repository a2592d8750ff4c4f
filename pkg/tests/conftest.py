import numpy as np
import pytest

from cartimp.model import extract_chain, parse_robot_description
from cartimp.sim import builtin_robot

PANDA_Q0 = np.array([0.0, -0.3, 0.0, -2.0, 0.0, 1.8, 0.785])


def load_chain(robot, base, tip):
    return extract_chain(parse_robot_description(builtin_robot(robot)), base, tip)


@pytest.fixture(scope="session")
def panda():
    return load_chain("panda_like", "link0", "hand_tcp")


@pytest.fixture(scope="session")
def planar():
    return load_chain("planar_2link", "base", "tip")


@pytest.fixture(scope="session")
def ur():
    return load_chain("ur_like", "base_link", "tool0")


@pytest.fixture(scope="session")
def pendulum():
    return load_chain("pendulum", "base", "bob")


@pytest.fixture(scope="session")
def arm():
    return load_chain("arm_1dof", "base", "tool")


def random_q(chain, rng):
    """Uniform joint sample inside the position limits (or +-pi without limits)."""
    lo, hi = chain.position_limits
    lo = np.where(np.isfinite(lo), lo, -np.pi)
    hi = np.where(np.isfinite(hi), hi, np.pi)
    return rng.uniform(lo, hi)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
