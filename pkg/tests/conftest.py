"""Shared fixtures: small flow families reused across test modules."""

from __future__ import annotations

import numpy as np
import pytest

from hsflow.envelope import compute_flow, default_t_grid
from hsflow.geometry import Atlas
from hsflow.potentials import PotentialSpec, make_potential

# lines printed at the end of the run by the acceptance suite
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def flow(variant: str, n: int, nt: int, **kw):
    atlas = Atlas(n)
    phi = make_potential(PotentialSpec(variant, **kw), atlas)
    return compute_flow(phi, default_t_grid(nt))


@pytest.fixture(scope="session")
def atlas65():
    return Atlas(65)


@pytest.fixture(scope="session")
def zero65():
    """phi = 0 on a 65 x 65 atlas, 21 times."""
    return flow("zero", 65, 21)


@pytest.fixture(scope="session")
def radial65():
    return flow("radial", 65, 21)


@pytest.fixture(scope="session")
def zero129():
    """phi = 0 at n = 129 with dt = 0.01."""
    return flow("zero", 129, 101)


@pytest.fixture(scope="session")
def dumbbell129():
    """The shipped dumbbell at n = 129 with dt = 0.02."""
    return flow("dumbbell", 129, 51)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
