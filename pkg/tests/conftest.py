import numpy as np
import pytest

from qtune.config import Config
from qtune.pipeline import build_design
from qtune.plant import PendulumParams, pendulum_linearize


@pytest.fixture(scope="session")
def params():
    return PendulumParams()


@pytest.fixture(scope="session")
def lp(params):
    return pendulum_linearize(params)


@pytest.fixture(scope="session")
def design():
    return build_design(Config())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_stabilizable(rng, n, m):
    """Random (A, B) with a PBH-stabilizable pair (generic B is controllable)."""
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, m))
    return A, B


def random_stable(rng, n, m, p, shift=0.1):
    A = rng.standard_normal((n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + shift + rng.uniform(0, 1)) * np.eye(n)
    return A, rng.standard_normal((n, m)), rng.standard_normal((p, n)), rng.standard_normal((p, m))


ACCEPTANCE_LINES: dict[int, str] = {}


def report_criterion(number: int, ok: bool, text: str) -> None:
    """Record one acceptance line; printed in the terminal summary."""
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {text}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
