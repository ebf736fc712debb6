import numpy as np
import pytest

from dmcbounds.channel_model import Dmc, make_named_channel


@pytest.fixture
def bsc():
    return make_named_channel("bsc", [0.11])


@pytest.fixture
def zch():
    return make_named_channel("z", [0.5])


@pytest.fixture
def bito():
    return make_named_channel("bito", [0.2])


def random_channels(count, nx=3, ny=4, seed=1):
    rng = np.random.default_rng(seed)
    return [Dmc(rng.dirichlet(np.ones(ny), size=nx)) for _ in range(count)]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
