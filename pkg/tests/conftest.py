import numpy as np
import pytest
from hypothesis import settings

from vpbsim.domain import DomainGeometry
from vpbsim.lattice import PhaseGrid, VelocityLattice

settings.register_profile("vpbsim", deadline=None, max_examples=40)
settings.load_profile("vpbsim")


@pytest.fixture(scope="session")
def lattice8():
    return VelocityLattice(8, 6.0)


@pytest.fixture(scope="session")
def small_grid():
    return PhaseGrid(DomainGeometry.slab(1.0), VelocityLattice(8, 6.0), 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
