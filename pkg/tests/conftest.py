import math

import numpy as np
import pytest

from hmfstrata.flow import make_initial_data
from hmfstrata.geometry import Grid, SpaceTimeField


def static_field(kind, nodes, lo=-0.5, hi=0.5, n=3, t0=-1.0, t1=0.0, **kw):
    snap = make_initial_data(kind, Grid.cube(n, nodes, lo, hi), **kw)
    return SpaceTimeField.static(snap, t0, t1)


def constant_field(n=3, nodes=17, d=3, t0=-1.0, t1=0.0):
    from hmfstrata.geometry import FieldSnapshot
    g = Grid.cube(n, nodes, -0.5, 0.5)
    vals = np.zeros(g.counts + (d,))
    vals[..., -1] = 1.0
    return SpaceTimeField.static(FieldSnapshot(g, 0.0, vals), t0, t1)


@pytest.fixture(scope="session")
def hedgehog32():
    return static_field("hedgehog", 32)


@pytest.fixture(scope="session")
def line32():
    return static_field("line-singular", 32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


LN2 = math.log(2.0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
