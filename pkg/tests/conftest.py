import numpy as np
import pytest

from fluxq.propagator import PotentialSpec, SplitStepPlan
from fluxq.qreg import GridSpec


def make_plan(nu=6, dx=0.3, kind="free", n_dof=1, **pot):
    grid = GridSpec.from_spacing(n_dof, nu // n_dof, dx)
    return SplitStepPlan.build(grid, PotentialSpec(kind, **pot))


POTENTIALS = {
    "free": {},
    "harmonic": {"omega": 1.0},
    "eckart": {"height": 1.5, "width": 1.5, "wall": 10.0},
    "double_well": {"a": 0.5, "b": 2.0},
}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def eckart6():
    return make_plan(6, 0.45, "eckart", height=1.5, width=1.5, wall=10.0)


@pytest.fixture(scope="session")
def harmonic6():
    return make_plan(6, 0.4, "harmonic", omega=1.0)


def random_state(rng, n, real=False):
    a = rng.standard_normal(n)
    if not real:
        a = a + 1j * rng.standard_normal(n)
    return a / np.linalg.norm(a)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
