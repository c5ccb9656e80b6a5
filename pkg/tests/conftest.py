import numpy as np
import pytest

from chivi.model import Dataset, make_conjugate_gaussian, make_probit

SKEWED_X = np.array([[0.5], [1.0], [1.5], [2.0], [-0.8]])
SKEWED_Y = np.array([1.0, 1.0, 1.0, 1.0, -1.0])


@pytest.fixture
def conj1():
    rng = np.random.default_rng(11)
    return make_conjugate_gaussian([0.0], [1.0], 1.0, rng.normal(1.0, 1.0, (20, 1)))


@pytest.fixture
def conj2():
    rng = np.random.default_rng(12)
    return make_conjugate_gaussian([0.0, 0.5], [1.0, 2.0], 0.8, rng.normal(1.0, 1.0, (15, 2)))


@pytest.fixture
def probit5():
    """Five-point 1-D probit posterior with a visibly skewed shape."""
    return make_probit(Dataset(SKEWED_X, SKEWED_Y), 1.0)


@pytest.fixture
def probit_small():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(6, 2))
    y = np.where(rng.random(6) < 0.5, -1.0, 1.0)
    return make_probit(Dataset(X, y), 2.0, intercept=True)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)
