import numpy as np
import pytest

from probcomb.distributions import Categorical
from probcomb.model import primitive
from probcomb.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture
def np_gen():
    return np.random.default_rng(20240601)


_PRIOR = Categorical([0.5, 0.5])
_LIK = (Categorical([0.8, 0.2]), Categorical([0.1, 0.9]))


@primitive
def bernoulli_pair(t):
    z = t.sample("z", _PRIOR)
    t.observe("y", _LIK[z], 1)
    return z


@pytest.fixture
def bern():
    return bernoulli_pair


# acceptance criterion number -> (passed, title, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {title}  ({detail})")
