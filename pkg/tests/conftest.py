import numpy as np
import pytest
from hypothesis import settings

from morreykit.field import Ball, make_grid

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def disk32():
    return make_grid([(-1, 1)] * 2, 32, Ball((0, 0), 1.0))


@pytest.fixture(scope="session")
def disk64():
    return make_grid([(-1, 1)] * 2, 64, Ball((0, 0), 1.0))


@pytest.fixture(scope="session")
def square32():
    return make_grid([(0, 1)] * 2, 32)


def radial(x, e):
    return np.linalg.norm(x, axis=-1) ** e


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split()[0].rstrip(":"))):
            terminalreporter.write_line(line)
