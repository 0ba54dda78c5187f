import functools

import numpy as np
import pytest

from vpsfem.fem import FESpace
from vpsfem.mesh import build_periodic_unit_square_mesh
from vpsfem.model import make_preset

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


@functools.lru_cache(maxsize=None)
def space_for(n: int) -> FESpace:
    return FESpace(build_periodic_unit_square_mesh(n))


@pytest.fixture(scope="session")
def exp1():
    return make_preset("experiment1")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
