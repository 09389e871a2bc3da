import numpy as np
import pytest

from kahlerlab.geodesic_solver import GeodesicProblem, newton_solve
from kahlerlab.torus import ScalarField, TorusSpec


def cosine_field(torus, amp=0.05):
    x, y = torus.coords()
    return ScalarField(torus, amp * np.cos(2 * np.pi * x / torus.L) + 0 * y)


@pytest.fixture(scope="session")
def torus64():
    return TorusSpec(1, 4.0, 64)


@pytest.fixture(scope="session")
def small_solutions(torus64):
    """Small-data geodesics at the two foliation levels, shared across modules."""
    v = cosine_field(torus64)
    return {eps: newton_solve(GeodesicProblem(torus64, v, eps, 16)) for eps in (0.02, 0.01)}


ACCEPTANCE_LINES = []


def record_criterion(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
