import numpy as np
import pytest

from inspectgame.model import ModelParams
from inspectgame.solver import TimeGrid, solve_mfg_fixed_point

X0 = (0.5, 0.3, 0.2)

# acceptance criterion id -> (description, passed); filled by test_acceptance
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def sol(params):
    return solve_mfg_fixed_point(params, TimeGrid(200, params.T), X0)


@pytest.fixture(scope="session")
def sol_short():
    p = ModelParams(T=0.25)
    return solve_mfg_fixed_point(p, TimeGrid(200, p.T), X0)


@pytest.fixture(scope="session")
def sol_eta(params):
    return solve_mfg_fixed_point(params, TimeGrid(200, params.T), X0, eta=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
        desc, ok = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {desc}")
