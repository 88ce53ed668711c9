import numpy as np
import pytest

from fboal import network, pde


@pytest.fixture
def burgers():
    return pde.burgers_problem(0.01)


@pytest.fixture
def wave():
    return pde.wave_problem(2.0)


@pytest.fixture
def small_net():
    return network.init_network((2, 8, 8, 1), seed=3)


def fd_grad(f, flat, h=1e-6):
    """Central differences of a scalar function of a flat parameter vector."""
    g = np.zeros_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records and prints one PASS/FAIL line, then asserts ``ok``."""

    def check(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
