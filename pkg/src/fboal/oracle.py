"""Reference solutions and evaluation grids.

Burgers with ``u(x, 0) = -sin(pi x)`` and zero walls is solved through the
Cole-Hopf transform. The heat-kernel convolution becomes a Gauss-Hermite sum
over ``y = x - 2 sqrt(nu t) z``:

    u(x, t) = - sum_i w_i sin(pi y_i) f(y_i) / sum_i w_i f(y_i),
    f(y) = exp(-cos(pi y) / (2 pi nu))

The exponent is shifted by its row maximum before exponentiating, so small
viscosities do not overflow.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import roots_hermite

CONVERGENCE_TOL = 1e-6
_CHUNK = 4096


class QuadratureError(RuntimeError):
    pass


@lru_cache(maxsize=8)
def _hermite(n: int):
    z, w = roots_hermite(n)
    return z, w


def _cole_hopf(x, t, nu, n):
    z, w = _hermite(n)
    out = np.empty(x.size)
    for s in range(0, x.size, _CHUNK):
        xs, ts = x[s : s + _CHUNK], t[s : s + _CHUNK]
        y = xs[:, None] - 2.0 * np.sqrt(nu * ts)[:, None] * z[None, :]
        e = -np.cos(np.pi * y) / (2.0 * np.pi * nu)
        e -= e.max(axis=1, keepdims=True)
        f = np.exp(e) * w
        out[s : s + _CHUNK] = -(np.sin(np.pi * y) * f).sum(axis=1) / f.sum(axis=1)
    return out


def burgers_reference(x, t, nu: float, quad_order: int = 128, check: bool = True):
    """Exact Burgers solution at points ``(x, t)`` (scalars or arrays).

    With ``check`` the sum is repeated at twice the order and a
    :class:`QuadratureError` is raised when the two differ by more than
    ``1e-6``. The field never exceeds the unit amplitude of its initial
    condition, so this is also a relative bound. The doubled-order values
    are returned.
    """
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    if quad_order < 32:
        raise ValueError("quad_order must be at least 32")
    scalar = np.ndim(x) == 0 and np.ndim(t) == 0
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    shape = x.shape
    x, t = x.ravel(), t.ravel()
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    u = -np.sin(np.pi * x)
    live = t > 0
    if live.any():
        xl, tl = x[live], t[live]
        un = _cole_hopf(xl, tl, nu, quad_order)
        if check:
            u2n = _cole_hopf(xl, tl, nu, 2 * quad_order)
            change = np.max(np.abs(un - u2n))
            if change > CONVERGENCE_TOL:
                worst = int(np.argmax(np.abs(un - u2n)))
                raise QuadratureError(
                    f"Gauss-Hermite orders {quad_order}/{2 * quad_order} differ by {change:.3e} "
                    f"(nu={nu}, worst at x={xl[worst]}, t={tl[worst]})"
                )
            un = u2n
        u[live] = un
    u = u.reshape(shape)
    return float(u) if scalar else u


def wave_exact(x, t, c2: float, l: float = 4.0):
    """Closed-form wave solution: four sech profiles travelling at speed ``sqrt(c2)``."""
    c = math.sqrt(c2)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    h = lambda s: 0.5 / np.cosh(2.0 * s)  # noqa: E731
    u = h(x + c * t) - h(x - 2 * l + c * t) + h(x - c * t) - h(x + 2 * l - c * t)
    return float(u) if u.ndim == 0 else u


@dataclass(frozen=True)
class EvalGrid:
    x: np.ndarray
    t: np.ndarray
    kind: str = "test"

    def __post_init__(self) -> None:
        if self.kind not in ("test", "validation"):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        for v in (self.x, self.t):
            if np.any(np.diff(v) <= 0):
                raise ValueError("grid nodes must be strictly increasing")

    @property
    def shape(self) -> tuple[int, int]:
        return self.x.size, self.t.size

    @property
    def size(self) -> int:
        return self.x.size * self.t.size

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ``(x, t)`` arrays, x varying slowest."""
        X, T = np.meshgrid(self.x, self.t, indexing="ij")
        return X.ravel(), T.ravel()


def make_grid(spec, nx: int, nt: int, kind: str = "test") -> EvalGrid:
    """Equidistant nodes spanning the closed problem box."""
    if nx < 2 or nt < 2:
        raise ValueError("need at least two nodes per axis")
    return EvalGrid(np.linspace(*spec.x_range, nx), np.linspace(*spec.t_range, nt), kind)


def testing_grid(spec) -> EvalGrid:
    return make_grid(spec, 10, 10, "test")


def validation_grid(spec) -> EvalGrid:
    return make_grid(spec, 256, 100, "validation")


def reference_field(spec, grid: EvalGrid, param: float | None = None) -> np.ndarray:
    """Exact solution on the grid points, flattened like :meth:`EvalGrid.points`."""
    p = spec.param_value if param is None else param
    x, t = grid.points()
    if spec.kind == "burgers":
        return burgers_reference(x, t, p)
    return wave_exact(x, t, p, spec.x_range[1])


def export_reference_csv(path: str | Path, grid: EvalGrid, values) -> None:
    """Write ``x,t,value`` rows."""
    x, t = grid.points()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "t", "value"])
        for row in zip(x, t, np.asarray(values).ravel()):
            w.writerow([repr(float(v)) for v in row])
