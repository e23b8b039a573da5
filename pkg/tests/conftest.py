import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mbblab.harness import standard_instance, triangle_instance
from mbblab.mbb import extract_dual, solve_primal

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def std():
    inst = standard_instance()
    ps = solve_primal(inst)
    return inst, ps, extract_dual(inst, ps)


@pytest.fixture(scope="session")
def tri():
    inst = triangle_instance()
    ps = solve_primal(inst)
    return inst, ps, extract_dual(inst, ps)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from .acceptance_log import summary_lines

    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
