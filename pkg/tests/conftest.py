import sys

import numpy as np
import pytest

from bsdelab.lattice import build_lattice, standard_walk_martingale
from bsdelab.processes import constant, deterministic_driver


@pytest.fixture
def tree2():
    """Depth-2 recombining tree, p = 1/2, A = [0, 0.5, 1]."""
    model = build_lattice(2, 0.5)
    m = standard_walk_martingale(model)
    return model, m, deterministic_driver(model, [0.0, 0.5, 1.0])


@pytest.fixture
def walk2(tree2):
    model, m, _ = tree2
    return m.values


@pytest.fixture
def ones2(tree2):
    return constant(tree2[0], 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)



def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
