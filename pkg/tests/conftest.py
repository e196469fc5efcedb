import numpy as np
import pytest

from pmjp.model import parse_model
from pmjp.statespace import StateBox, enumerate_box

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def one_hot_model(n_states, name="cycle"):
    """A single token hopping between ``n_states`` sites: a finite CTMC as a pMJP.

    Parameters are numbered by site, the move to k+1 before the move to k-1,
    skipping moves off either end.  The conserved total keeps the space at
    n_states.
    """
    lines = [f"species S{k}" for k in range(n_states)]
    p = 0
    for k in range(n_states):
        for j in (k + 1, k - 1):
            if 0 <= j < n_states:
                lines.append(f"reaction r{k}_{j}: S{k}:-1 S{j}:+1 @ theta[{p}] * S{k}")
                lines.append(f"prior theta[{p}] ~ Gamma(1, 1)")
                p += 1
    return parse_model("\n".join(lines), name=name)


def one_hot_space(n_states):
    return enumerate_box(StateBox((1,) * n_states, invariant=((1,) * n_states, 1)))


@pytest.fixture
def two_state():
    return one_hot_model(2, "flipflop")


@pytest.fixture
def immigration():
    return parse_model("""
species X
reaction arrive: X:+1 @ theta[0]
prior theta[0] ~ Gamma(1, 1)
""", name="immigration")
