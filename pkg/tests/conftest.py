import numpy as np
import pytest

from sparse_radon import make_grid
from sparse_radon.lattice import GridSpec

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid2d():
    return make_grid(2, 9, 5)


@pytest.fixture(scope="session")
def small1d():
    """N = 32, u = 8; below the experiment guard, used for oracle checks."""
    return GridSpec(1, 5, 3)


@pytest.fixture(scope="session")
def small2d():
    """N = 64, u = 8; below the experiment guard, used for oracle checks."""
    return GridSpec(2, 6, 3)
