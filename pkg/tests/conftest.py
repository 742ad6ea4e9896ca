import numpy as np
import pytest

from cirl.cmdp import Cmdp


def random_cmdp(rng, n=4, m=3, k=0, gamma=0.9, b=None):
    P = rng.random((n * m, n)) + 0.05
    P /= P.sum(axis=1, keepdims=True)
    nu0 = rng.random(n) + 0.1
    nu0 /= nu0.sum()
    psi = rng.random((n * m, k)) if k else None
    if k and b is None:
        b = rng.uniform(0.3, 0.8, size=k)
    return Cmdp(n=n, m=m, gamma=gamma, nu0=nu0, transition=P, psi=psi, b=b if k else None)


def random_policy(rng, n, m, floor=0.0):
    pi = rng.random((n, m)) + floor
    return pi / pi.sum(axis=1, keepdims=True)


def example1(b=0.75):
    """Single state, two actions, cost on the second action."""
    return Cmdp(n=1, m=2, gamma=0.5, nu0=[1.0], transition=[[1.0], [1.0]], psi=[[0.0], [1.0]], b=[b])


def example2():
    return Cmdp(n=1, m=2, gamma=0.5, nu0=[1.0], transition=[[1.0], [1.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
