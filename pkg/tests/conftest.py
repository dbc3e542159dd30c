import numpy as np
import pytest

from datarecon.experiments import make_fixture


@pytest.fixture(scope="session")
def affine_fixture():
    return make_fixture("affine")


@pytest.fixture(scope="session")
def onehidden_fixture():
    return make_fixture("onehidden")


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
