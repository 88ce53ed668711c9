import math

import numpy as np
import pytest

from fboal import autodiff as ad
from fboal import network, oracle, pde, sampling

from conftest import fd_grad


def zero_net(n_in=2):
    p = network.init_network((n_in, 6, 6, 1), 0)
    p.flat[:] = 0.0
    return p


def test_zero_network_residual_is_pure_viscous_term(burgers):
    # u = -sin(pi x): u_t = 0, u u_x = 0 at x = 0.5, u_xx = pi^2
    r = pde.burgers_residual(zero_net(), burgers, 0.5, 0.3, 0.01)
    assert r == pytest.approx(-0.01 * math.pi**2, rel=1e-12)
    assert r == pytest.approx(-0.0987, abs=5e-5)


def test_zero_network_pde_loss_matches_closed_form(burgers):
    C = sampling.init_collocation(burgers, 1024)
    s, c = np.sin(np.pi * C.x), np.cos(np.pi * C.x)
    expected = np.mean((np.pi * s * c - 0.01 * np.pi**2 * s) ** 2)
    assert pde.pde_loss(zero_net(), burgers, C) == pytest.approx(expected, rel=1e-12)


def test_batched_matches_scalar_residuals(burgers, wave):
    rng = np.random.default_rng(0)
    for spec in (burgers, wave):
        p = network.init_network((2, 8, 8, 1), 1)
        x = rng.uniform(*spec.x_range, 7)
        t = rng.uniform(*spec.t_range, 7)
        batched = pde.residuals(p, spec, x, t)
        scalar = [pde.residual_at(p, spec, a, b) for a, b in zip(x, t)]
        np.testing.assert_allclose(batched, scalar, rtol=1e-11, atol=1e-12)


def test_parameterized_residual_uses_per_point_values():
    spec = pde.burgers_problem(param_range=(0.0025, 0.0124))
    p = network.init_network((3, 8, 1), 2)
    x, t = np.array([0.2, 0.2]), np.array([0.4, 0.4])
    nu = np.array([0.003, 0.011])
    r = pde.residuals(p, spec, x, t, nu)
    assert r[0] != r[1]
    assert r[1] == pytest.approx(pde.residual_at(p, spec, 0.2, 0.4, 0.011), rel=1e-11)
    with pytest.raises(ValueError):
        pde.residuals(p, spec, x, t)


def test_wave_residual_vanishes_for_exact_field():
    # the residual operator applied to the closed-form solution, by 5-point stencils
    c2, h = 2.5, 1e-3
    for x, t in [(0.3, 1.1), (-2.0, 4.0), (3.5, 0.5)]:
        u = lambda a, b: oracle.wave_exact(a, b, c2)  # noqa: E731
        uxx = (-u(x + 2 * h, t) + 16 * u(x + h, t) - 30 * u(x, t) + 16 * u(x - h, t) - u(x - 2 * h, t)) / (12 * h * h)
        utt = (-u(x, t + 2 * h) + 16 * u(x, t + h) - 30 * u(x, t) + 16 * u(x, t - h) - u(x, t - 2 * h)) / (12 * h * h)
        assert abs(utt - c2 * uxx) < 1e-5


def test_points_outside_box_rejected(burgers):
    with pytest.raises(ValueError):
        pde.burgers_residual(zero_net(), burgers, 1.2, 0.5, 0.01)
    with pytest.raises(ValueError):
        pde.burgers_residual(zero_net(), burgers, 0.0, 0.5, 0.0)


def test_empty_set_rejected(burgers):
    C = sampling.init_collocation(burgers, 4).subset([])
    with pytest.raises(ValueError):
        pde.pde_loss(zero_net(), burgers, C)


def test_hard_ansatz_has_no_boundary_loss(burgers):
    assert pde.ic_bc_loss(network.init_network((2, 5, 1), 0), burgers, None) == (0.0, 0.0)


def test_zero_network_wave_boundary_terms(wave):
    pts = pde.boundary_points(wave)
    l_ic, l_bc = pde.ic_bc_loss(zero_net(), wave, pts)
    assert l_ic == pytest.approx(np.mean(pde.wave_initial(pts.ic_x) ** 2))
    assert l_bc == 0.0
    assert np.count_nonzero(pts.bc_x == -4.0) == np.count_nonzero(pts.bc_x == 4.0) == 256


def test_wave_needs_boundary_points(wave):
    with pytest.raises(ValueError):
        pde.ic_bc_loss(zero_net(), wave, None)


def test_wave_initial_is_exact_solution_at_rest():
    x = np.linspace(-4, 4, 33)
    np.testing.assert_allclose(oracle.wave_exact(x, 0.0, 3.0), pde.wave_initial(x), atol=1e-15)
    assert pde.wave_initial(0.0) == pytest.approx(1 - 1 / math.cosh(16), abs=1e-15)
    # the alternative sign on the -2l mirror term differs by sech(2(x+8)) only
    alt = 1 / np.cosh(2 * x) - 0.5 / np.cosh(2 * (x - 8)) + 0.5 / np.cosh(2 * (x + 8))
    assert np.max(np.abs(alt - pde.wave_initial(x))) == pytest.approx(1 / math.cosh(8), rel=1e-12)


@pytest.mark.parametrize("kind", ["burgers", "wave", "burgers_param"])
def test_loss_gradient_matches_finite_differences(kind):
    if kind == "burgers":
        spec, vals = pde.burgers_problem(0.01), ()
    elif kind == "wave":
        spec, vals = pde.wave_problem(2.0, n_ic=16, n_bc=16), ()
    else:
        spec, vals = pde.burgers_problem(param_range=(0.0025, 0.0124)), (0.003, 0.01)
    p = network.init_network((spec.n_inputs, 5, 5, 1), 7)
    C = sampling.init_collocation(spec, 20, vals or None)
    pts = None if spec.hard_constrained else pde.boundary_points(spec)
    data = pde.LabeledPoints(np.array([0.1, -0.2]), np.array([0.3, 0.6]), np.array([0.5, -0.1]),
                             np.array([0.004, 0.009]) if vals else None)
    parts, g = pde.loss_and_grad(p, spec, C, pts, data)

    def total():
        lp = pde.pde_loss(p, spec, C)
        ic, bc = pde.ic_bc_loss(p, spec, pts)
        return lp + ic + bc + pde.data_loss(p, spec, data)

    assert parts.total == pytest.approx(total(), rel=1e-12)
    ref = fd_grad(total, p.flat)
    np.testing.assert_allclose(g, ref, rtol=1e-5, atol=1e-8 * np.abs(ref).max())


def test_gradient_matches_tape_engine(burgers):
    p = network.init_network((2, 6, 6, 1), 8)
    C = sampling.init_collocation(burgers, 6)
    _, g = pde.loss_and_grad(p, burgers, C)
    tape = ad.Tape()
    lifted = network.lift_params(p, tape)
    acc = tape.constant(0.0)
    for x, t in zip(C.x, C.t):
        r = pde.burgers_residual(lifted, burgers, float(x), float(t), 0.01)
        acc = acc + r * r
    ref = ad.grad(acc / float(len(C)))
    np.testing.assert_allclose(g, [ref[i] for i in range(p.flat.size)], rtol=1e-9, atol=1e-13)


def test_want_residuals_aligned_with_set(burgers):
    p = network.init_network((2, 6, 1), 1)
    C = sampling.init_collocation(burgers, 16)
    _, _, r = pde.loss_and_grad(p, burgers, C, want_residuals=True)
    np.testing.assert_allclose(r, pde.residuals(p, burgers, C.x, C.t), rtol=1e-13)


def test_normalization_maps_box_to_unit_square(wave):
    X = wave.normalize([-4.0, 4.0], [0.0, 5.5])
    np.testing.assert_allclose(X, [[-1, -1], [1, 1]])
