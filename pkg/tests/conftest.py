import sys

import numpy as np
import pytest

from mppbsde import CompensatorSpec, MarkSpace, TerminalCondition, TimeGrid, make_driver, solve_backward


def unit_spec(K=1, phi=None, A_end=1.0, T=1.0):
    phi = phi if phi is not None else [1.0 / K] * K
    return CompensatorSpec(MarkSpace(tuple(range(K))), (0.0,), (tuple(phi),), (0.0, T), (0.0, A_end), T)


def indicator(scale=1.0):
    return TerminalCondition(lambda c: scale * (c.sum(axis=1) >= 1), bound=abs(scale), description="1{n>=1}")


def count_terminal():
    return TerminalCondition(lambda c: c.sum(axis=1).astype(float), description="n")


@pytest.fixture(scope="session")
def spec():
    return unit_spec()


@pytest.fixture(scope="session")
def xi():
    return indicator()


@pytest.fixture(scope="session")
def grid(spec):
    return TimeGrid.uniform(spec, 1000)


@pytest.fixture(scope="session")
def zero_field(spec, xi, grid):
    return solve_backward(spec, make_driver("zero"), xi, grid, n_max=30)


@pytest.fixture(scope="session")
def entropic_field(spec, xi, grid):
    return solve_backward(spec, make_driver("entropic:1"), xi, grid, n_max=30)


@pytest.fixture(scope="session")
def entropic_rk4(spec, xi, grid):
    return solve_backward(spec, make_driver("entropic:1"), xi, grid, n_max=30, scheme="rk4")


ENTROPIC_Y0 = float(np.log(np.exp(-1.0) + np.e - 1.0))
ZERO_Y0 = float(1.0 - np.exp(-1.0))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
