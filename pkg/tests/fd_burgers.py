"""Crank-Nicolson finite differences for viscous Burgers, used only as a test oracle.

``u_t + (u^2/2)_x = nu u_xx`` on [-1, 1] with zero walls and ``u(x,0) = -sin(pi x)``.
Each step solves the implicit trapezoidal system by Newton iteration with
banded (tridiagonal) Jacobians.
"""

import numpy as np
from scipy.linalg import solve_banded


def _rhs(u, dx, nu):
    # interior only; u includes the two zero wall values
    f = 0.5 * u * u
    adv = (f[2:] - f[:-2]) / (2 * dx)
    diff = nu * (u[2:] - 2 * u[1:-1] + u[:-2]) / (dx * dx)
    return diff - adv


def solve(nu, n_cells, n_steps, t_end=1.0, save_every=1, tol=1e-13):
    """Return ``(x, times, U)`` with ``U[k]`` the field at ``times[k]``."""
    x = np.linspace(-1.0, 1.0, n_cells + 1)
    dx = 2.0 / n_cells
    dt = t_end / n_steps
    u = -np.sin(np.pi * x)
    u[0] = u[-1] = 0.0
    out, times = [u.copy()], [0.0]
    m = n_cells - 1
    ab = np.zeros((3, m))
    for step in range(1, n_steps + 1):
        r_old = _rhs(u, dx, nu)
        v = u.copy()
        for _ in range(30):
            F = (v[1:-1] - u[1:-1]) / dt - 0.5 * (_rhs(v, dx, nu) + r_old)
            # Jacobian of F with respect to interior values
            c = nu / (dx * dx)
            ab[1] = 1.0 / dt + c
            ab[0, 1:] = 0.5 * (v[2:-1] / (2 * dx) - c)      # d/d v_{i+1}
            ab[2, :-1] = 0.5 * (-v[1:-2] / (2 * dx) - c)    # d/d v_{i-1}
            delta = solve_banded((1, 1), ab, -F)
            v[1:-1] += delta
            if np.max(np.abs(delta)) < tol:
                break
        else:  # pragma: no cover
            raise RuntimeError("Newton iteration did not converge")
        u = v
        if step % save_every == 0:
            out.append(u.copy())
            times.append(step * dt)
    return x, np.array(times), np.array(out)
