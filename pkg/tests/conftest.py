import numpy as np
import pytest

from eclab.grid import FourierForm, PeriodicGrid
from eclab.torus_map import TorusMap

CAT = {"A": [[2, 1], [1, 1]]}
DOUBLING = {"A": [[2]], "perturbation": [{"coord": 0, "freq": [1], "sin": 0.05}]}
TWO_I = {"A": [[2, 0], [0, 2]], "perturbation": [
    {"coord": 0, "freq": [0, 1], "sin": 0.03}, {"coord": 1, "freq": [1, 1], "cos": 0.02}]}


def random_form(rng, n, k, B, complex_coefs=True):
    """Real band-limited k-form with random modes ``|m_i| <= B``."""
    u = FourierForm.zeros(n, k, B)
    u.coefs[:] = rng.normal(size=u.coefs.shape)
    if complex_coefs:
        u.coefs[:] += 1j * rng.normal(size=u.coefs.shape)
    # project onto real forms
    return FourierForm.from_field(u.to_field(PeriodicGrid(n, 1 << int(np.ceil(np.log2(4 * B + 4))))))


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


@pytest.fixture(scope="session")
def cat():
    return TorusMap.from_spec(CAT)


@pytest.fixture(scope="session")
def doubling():
    return TorusMap.from_spec(DOUBLING)


@pytest.fixture(scope="session")
def two_i():
    return TorusMap.from_spec(TWO_I)


ACCEPTANCE_LINES = {}


def record_acceptance(number, title, passed, detail):
    line = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
