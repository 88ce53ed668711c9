import math

import numpy as np
import pytest

from fboal import oracle, pde

import fd_burgers


@pytest.mark.parametrize("nu", [0.0116, 0.0025])
def test_cole_hopf_agrees_with_crank_nicolson(nu):
    x, ts, U = fd_burgers.solve(nu, 49 * 80, 49 * 40, save_every=40)
    X, T = np.meshgrid(x[::80], ts, indexing="ij")
    ref = oracle.burgers_reference(X, T, nu)
    assert np.max(np.abs(ref - U[:, ::80].T)) < 1e-4


def test_initial_time_returns_initial_condition():
    x = np.linspace(-1, 1, 11)
    np.testing.assert_array_equal(oracle.burgers_reference(x, 0.0, 0.01), -np.sin(np.pi * x))


def test_frozen_reference_values():
    assert oracle.burgers_reference(0.25, 0.5, 0.0116) == pytest.approx(-0.8357190905935431, abs=1e-12)
    assert oracle.burgers_reference(0.25, 0.5, 0.0025) == pytest.approx(-0.8482458605651896, abs=1e-12)


def test_odd_symmetry_and_walls():
    x = np.array([0.1, 0.4, 0.8])
    u = oracle.burgers_reference(x, 0.6, 0.005)
    np.testing.assert_allclose(oracle.burgers_reference(-x, 0.6, 0.005), -u, atol=1e-12)
    assert abs(oracle.burgers_reference(1.0, 0.6, 0.005)) < 1e-10
    assert abs(oracle.burgers_reference(0.0, 0.6, 0.005)) < 1e-12


def test_reference_satisfies_burgers_by_stencils():
    nu, h = 0.0116, 1e-4
    xs = np.linspace(-0.9, 0.9, 50)
    ts = np.linspace(0.1, 0.9, 50)
    X, T = np.meshgrid(xs, ts, indexing="ij")
    u = lambda a, b: oracle.burgers_reference(a, b, nu)  # noqa: E731
    c = u(X, T)
    ut = (u(X, T + h) - u(X, T - h)) / (2 * h)
    ux = (u(X + h, T) - u(X - h, T)) / (2 * h)
    uxx = (u(X + h, T) - 2 * c + u(X - h, T)) / (h * h)
    assert np.max(np.abs(ut + c * ux - nu * uxx)) < 1e-3


def test_quadrature_failure_is_reported():
    with pytest.raises(oracle.QuadratureError):
        oracle.burgers_reference(0.01, 1.0, 1e-4, quad_order=32)


def test_bad_inputs():
    with pytest.raises(ValueError):
        oracle.burgers_reference(0.0, 0.5, 0.0)
    with pytest.raises(ValueError):
        oracle.burgers_reference(0.0, -0.5, 0.01)


def test_wave_exact_values():
    assert oracle.wave_exact(0.0, 0.0, 2.0) == pytest.approx(1 - 1 / math.cosh(16), abs=1e-15)
    # the +-ct pairs cancel at t = 0, the mirrored pair leaves c [h'(x+8) - h'(x-8)]
    c, h = math.sqrt(2.0), 1e-6
    x = np.linspace(-4, 4, 81)
    ut = (oracle.wave_exact(x, h, 2.0) - oracle.wave_exact(x, -h, 2.0)) / (2 * h)
    dh = lambda s: -np.tanh(2 * s) / np.cosh(2 * s)  # noqa: E731
    np.testing.assert_allclose(ut, c * (dh(x + 8) - dh(x - 8)), atol=1e-9)
    assert np.max(np.abs(ut)) < c / math.cosh(8)


def test_wave_exact_stencil_residual():
    c2, h = 3.0, 1e-3
    X, T = np.meshgrid(np.linspace(-3.9, 3.9, 40), np.linspace(0.1, 5.4, 40), indexing="ij")
    u = lambda a, b: oracle.wave_exact(a, b, c2)  # noqa: E731
    uxx = (-u(X + 2 * h, T) + 16 * u(X + h, T) - 30 * u(X, T) + 16 * u(X - h, T) - u(X - 2 * h, T)) / (12 * h * h)
    utt = (-u(X, T + 2 * h) + 16 * u(X, T + h) - 30 * u(X, T) + 16 * u(X, T - h) - u(X, T - 2 * h)) / (12 * h * h)
    assert np.max(np.abs(utt - c2 * uxx)) < 1e-5


def test_grids():
    spec = pde.burgers_problem(0.01)
    g = oracle.testing_grid(spec)
    assert g.shape == (10, 10) and g.x[0] == -1 and g.t[-1] == 1
    v = oracle.validation_grid(spec)
    assert v.size == 25600
    x, t = v.points()
    assert x[0] == x[99] == -1.0 and t[99] == 1.0
    with pytest.raises(ValueError):
        oracle.make_grid(spec, 1, 10)
    with pytest.raises(ValueError):
        oracle.EvalGrid(np.array([0.0, 0.0]), np.array([0.0, 1.0]))


def test_reference_field_and_csv(tmp_path):
    spec = pde.wave_problem(1.5)
    g = oracle.make_grid(spec, 4, 3)
    ref = oracle.reference_field(spec, g)
    x, t = g.points()
    np.testing.assert_array_equal(ref, oracle.wave_exact(x, t, 1.5))
    oracle.export_reference_csv(tmp_path / "r.csv", g, ref)
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == "x,t,value" and len(rows) == 13
