import itertools

import numpy as np
import pytest


def small_shapes(max_dim=4, max_order=4):
    """Every shape with 1 <= k <= max_order and dims in 1..max_dim."""
    for k in range(1, max_order + 1):
        yield from itertools.product(range(1, max_dim + 1), repeat=k)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
