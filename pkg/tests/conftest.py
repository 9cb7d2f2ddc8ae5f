import pytest

from mirrormdp import environments
from mirrormdp.amdp_solver import AmdpProgram
from mirrormdp.mdp_core import GenerativeModel
from mirrormdp.model_estimation import estimate_model

# filled by test_acceptance; one line per criterion
CRITERIA_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA_LINES):
            terminalreporter.write_line(CRITERIA_LINES[n])


@pytest.fixture(scope="session")
def riverswim():
    return environments.river_swim()


@pytest.fixture(scope="session")
def access_control():
    return environments.access_control()


@pytest.fixture(scope="session")
def riverswim_program(riverswim):
    model = estimate_model(GenerativeModel(riverswim), 1000, seed=0)
    return AmdpProgram(riverswim, model, 163.0)
