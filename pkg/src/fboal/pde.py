"""Residual operators and loss terms for the Burgers and wave problems.

Two evaluation paths share one definition of the problem:

* scalar functions (:func:`burgers_residual`, :func:`wave_residual`) push
  :class:`~fboal.autodiff.Dual2` coordinates through the network, one point at
  a time, and work with plain or tape-lifted parameters;
* batched functions (:func:`residuals`, :func:`loss_and_grad`) run the whole
  collocation set through the compiled kernel and return exact parameter
  gradients. These are what the training loop uses.

Network inputs are every coordinate mapped affinely onto [-1, 1] over the
problem box (and over the parameter interval in parameterized mode).
Derivatives are always taken with respect to the physical coordinates.

The wave residual is ``u_tt - c^2 u_xx``: that is the form the closed-form
travelling-wave solution satisfies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .network import LiftedParams, NetworkParams, OutputTransform, apply_transform, forward

BURGERS_BOX = ((-1.0, 1.0), (0.0, 1.0))
WAVE_L = 4.0
WAVE_T = 5.5


@dataclass(frozen=True)
class ProblemSpec:
    """A PDE problem on a space-time box.

    ``param_value`` fixes the viscosity (Burgers) or squared wave speed;
    ``param_range`` switches on parameterized mode, where the parameter is an
    extra network input and every point carries its own value.
    """

    kind: str
    x_range: tuple[float, float]
    t_range: tuple[float, float]
    param_value: float | None = None
    param_range: tuple[float, float] | None = None
    transform: OutputTransform = field(default_factory=OutputTransform)
    w_ic: float = 1.0
    w_bc: float = 1.0
    n_ic: int = 512
    n_bc: int = 512

    def __post_init__(self) -> None:
        if self.kind not in ("burgers", "wave"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        for lo, hi in (self.x_range, self.t_range):
            if not lo < hi:
                raise ValueError(f"empty interval [{lo}, {hi}]")
        if self.param_range is not None:
            lo, hi = self.param_range
            if not 0.0 < lo < hi:
                raise ValueError(f"parameter range needs 0 < low < high, got {self.param_range}")
        elif self.param_value is None or self.param_value <= 0:
            raise ValueError("a fixed-parameter problem needs a positive param_value")
        if self.w_ic < 0 or self.w_bc < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def parameterized(self) -> bool:
        return self.param_range is not None

    @property
    def n_inputs(self) -> int:
        return 3 if self.parameterized else 2

    @property
    def hard_constrained(self) -> bool:
        return self.transform.kind == "burgers_hard"

    @property
    def n_equations(self) -> int:
        return 1

    def _affine(self, lo, hi):
        s = 2.0 / (hi - lo)
        return s, -1.0 - s * lo

    @property
    def input_scales(self) -> tuple[float, ...]:
        """d(network input)/d(coordinate) per input channel."""
        out = [self._affine(*self.x_range)[0], self._affine(*self.t_range)[0]]
        if self.parameterized:
            out.append(self._affine(*self.param_range)[0])
        return tuple(out)

    def normalize(self, x, t, param=None) -> np.ndarray:
        """Network inputs ``(N, n_inputs)`` for arrays of coordinates."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
        cols = []
        for v, rng in ((x, self.x_range), (t, self.t_range)):
            s, o = self._affine(*rng)
            cols.append(s * v + o)
        if self.parameterized:
            s, o = self._affine(*self.param_range)
            cols.append(s * np.broadcast_to(np.asarray(param, dtype=float), x.shape) + o)
        return np.stack(cols, axis=1)

    def normalize_scalar(self, x, t, param=None) -> list:
        """Same map for one point; works on floats, Vars and Dual2s."""
        out = []
        for v, rng in ((x, self.x_range), (t, self.t_range)):
            s, o = self._affine(*rng)
            out.append(v * s + o)
        if self.parameterized:
            s, o = self._affine(*self.param_range)
            out.append(param * s + o)
        return out

    def param_array(self, param, n: int) -> np.ndarray:
        """Per-point PDE parameter: the stored values, or the fixed one."""
        if self.parameterized:
            p = np.asarray(param, dtype=float)
            if p.shape != (n,) or not np.all(np.isfinite(p)):
                raise ValueError("parameterized problems need a finite param per point")
            return p
        return np.full(n, float(self.param_value))

    def contains(self, x, t) -> np.ndarray:
        x, t = np.asarray(x), np.asarray(t)
        tol = 1e-12
        return ((x >= self.x_range[0] - tol) & (x <= self.x_range[1] + tol)
                & (t >= self.t_range[0] - tol) & (t <= self.t_range[1] + tol))


def burgers_problem(nu: float | None = None, param_range=None) -> ProblemSpec:
    """Burgers on [-1,1]x[0,1] with the hard initial/boundary ansatz."""
    return ProblemSpec("burgers", *BURGERS_BOX, param_value=nu, param_range=param_range,
                       transform=OutputTransform("burgers_hard"), w_ic=0.0, w_bc=0.0)


def wave_problem(c2: float | None = None, param_range=None, w_ic=1.0, w_bc=1.0,
                 n_ic=512, n_bc=512) -> ProblemSpec:
    """1D wave on [-4,4]x[0,5.5] with soft initial/boundary losses."""
    return ProblemSpec("wave", (-WAVE_L, WAVE_L), (0.0, WAVE_T), param_value=c2,
                       param_range=param_range, w_ic=w_ic, w_bc=w_bc, n_ic=n_ic, n_bc=n_bc)


def wave_initial(x, l: float = WAVE_L):
    """Initial displacement g(x): a sech pulse at 0 minus mirrored half pulses at +-2l.

    Both mirror terms are subtracted, which is the closed-form solution at
    ``t = 0``. Adding the one at ``-2l`` instead changes g by at most
    ``sech(8) / 2`` (about 6.7e-4) on the box.
    """
    x = np.asarray(x, dtype=float)
    return 1.0 / np.cosh(2 * x) - 0.5 / np.cosh(2 * (x - 2 * l)) - 0.5 / np.cosh(2 * (x + 2 * l))


# --- scalar path ---------------------------------------------------------------

def _check_point(spec: ProblemSpec, x: float, t: float) -> None:
    if not spec.contains(x, t):
        raise ValueError(f"({x}, {t}) lies outside the {spec.kind} box")


def _field(params, spec: ProblemSpec, x, t, param):
    raw = forward(params, spec.normalize_scalar(x, t, param))
    return apply_transform(spec.transform, raw, x, t)


def _derivs(params, spec, x, t, param, coord):
    # one forward-over-forward pass along x (coord 0) or t (coord 1)
    xs = ad.lift_input(x, 1.0 if coord == 0 else 0.0)
    ts = ad.lift_input(t, 1.0 if coord == 1 else 0.0)
    u = _field(params, spec, xs, ts, param)
    return u.value, u.d1, u.d2


def burgers_residual(params: NetworkParams | LiftedParams, spec: ProblemSpec,
                     x: float, t: float, nu: float):
    """``u_t + u u_x - nu u_xx`` at one point.

    Returns a float, or a tape :class:`~fboal.autodiff.Var` when ``params``
    were lifted onto a tape.
    """
    _check_point(spec, x, t)
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    u, u_x, u_xx = _derivs(params, spec, x, t, nu, 0)
    _, u_t, _ = _derivs(params, spec, x, t, nu, 1)
    return u_t + u * u_x - nu * u_xx


def wave_residual(params: NetworkParams | LiftedParams, spec: ProblemSpec,
                  x: float, t: float, c2: float):
    """``u_tt - c2 u_xx`` at one point."""
    _check_point(spec, x, t)
    if c2 <= 0:
        raise ValueError("c2 must be positive")
    _, _, u_xx = _derivs(params, spec, x, t, c2, 0)
    _, _, u_tt = _derivs(params, spec, x, t, c2, 1)
    return u_tt - c2 * u_xx


def residual_at(params, spec: ProblemSpec, x: float, t: float, param: float | None = None):
    p = param if spec.parameterized else spec.param_value
    fn = burgers_residual if spec.kind == "burgers" else wave_residual
    return fn(params, spec, x, t, p)


# --- batched path ----------------------------------------------------------------

_CHUNK = 4096
_DIRECTIONS = {"burgers": (("x", 2), ("t", 1)), "wave": (("x", 2), ("t", 2))}


class _Batch:
    """Network channels on a batch of points and their transformed fields."""

    def __init__(self, params, spec, x, t, param, dirs, workspace=None, keep_cache=True):
        self.x = np.asarray(x, dtype=float)
        self.t = np.asarray(t, dtype=float)
        self.dirs = dirs
        X = spec.normalize(self.x, self.t, param)
        scales = spec.input_scales
        seeds = np.zeros((len(dirs), spec.n_inputs))
        for j, (coord, _) in enumerate(dirs):
            c = "xt".index(coord)
            seeds[j, c] = scales[c]
        orders = tuple(o for _, o in dirs)
        self.layout, self.n_channels = kernels.channel_layout(orders)
        self.raw, self.cache = kernels.forward(params.weights, params.biases, X, seeds, orders,
                                               keep_cache, workspace)
        self.coef = spec.transform.coefficients(self.x, self.t)
        self.fields = self._fields()

    def _fields(self):
        k, raw = self.coef, self.raw
        n = raw[0]
        out = {"u": k["a"] * n + k["b"]}
        for (c, order), (i1, i2) in zip(self.dirs, self.layout):
            out["u_" + c] = k["a_" + c] * n + k["a"] * raw[i1] + k["b_" + c]
            if order == 2:
                out["u_" + c + c] = (k["a_" + c + c] * n + 2.0 * k["a_" + c] * raw[i1]
                                     + k["a"] * raw[i2] + k["b_" + c + c])
        return out

    def raw_adjoint(self, g: dict) -> np.ndarray:
        """Map d(loss)/d(field) onto d(loss)/d(raw channel), shape ``(C, N)``."""
        k = self.coef
        G = np.zeros((self.n_channels, self.x.size))
        G[0] = k["a"] * g.get("u", 0.0)
        for (c, order), (i1, i2) in zip(self.dirs, self.layout):
            g1 = g.get("u_" + c, 0.0)
            g2 = g.get("u_" + c + c, 0.0) if order == 2 else 0.0
            G[0] += k["a_" + c] * g1 + (k["a_" + c + c] * g2 if order == 2 else 0.0)
            G[i1] = k["a"] * g1 + (2.0 * k["a_" + c] * g2 if order == 2 else 0.0)
            if order == 2:
                G[i2] = k["a"] * g2
        return G


def _residual_and_adjoint(spec, f, p):
    """Residual array and d(residual)/d(field) factors."""
    if spec.kind == "burgers":
        r = f["u_t"] + f["u"] * f["u_x"] - p * f["u_xx"]
        return r, {"u_t": 1.0, "u": f["u_x"], "u_x": f["u"], "u_xx": -p}
    r = f["u_tt"] - p * f["u_xx"]
    return r, {"u_tt": 1.0, "u_xx": -p}


def residuals(params: NetworkParams, spec: ProblemSpec, x, t, param=None, workspace=None):
    """PDE residuals on arrays of points (batched, no gradient)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
    if x.size == 0:
        return np.zeros(0)
    p = spec.param_array(param, x.size)
    out = np.empty(x.size)
    # chunked so large candidate pools stay within a few tens of MB
    for s in range(0, x.size, _CHUNK):
        sl = slice(s, s + _CHUNK)
        b = _Batch(params, spec, x[sl], t[sl], p[sl], _DIRECTIONS[spec.kind], workspace, keep_cache=False)
        out[sl] = _residual_and_adjoint(spec, b.fields, p[sl])[0]
    return out


def predict(params: NetworkParams, spec: ProblemSpec, x, t, param=None) -> np.ndarray:
    """Transformed network output on arrays of points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
    p = spec.param_array(param, x.size) if spec.parameterized else None
    b = _Batch(params, spec, x, t, p, (), keep_cache=False)
    return b.fields["u"]


def _points(C, eq: int):
    mask = np.asarray(C.equation_index) == eq
    x, t = np.asarray(C.x)[mask], np.asarray(C.t)[mask]
    param = np.asarray(C.param)[mask] if C.param is not None else None
    return x, t, param


def pde_loss(params: NetworkParams, spec: ProblemSpec, C, equation_index: int = 0) -> float:
    """Mean squared residual over the points of ``C`` tagged ``equation_index``."""
    x, t, param = _points(C, equation_index)
    if x.size == 0:
        raise ValueError("pde_loss needs at least one collocation point")
    r = residuals(params, spec, x, t, param)
    return float(np.mean(r * r))


@dataclass
class BoundaryPoints:
    """Soft-constraint points: initial-time abscissae and boundary (x, t) pairs."""

    ic_x: np.ndarray
    ic_param: np.ndarray | None
    bc_x: np.ndarray
    bc_t: np.ndarray
    bc_param: np.ndarray | None


def boundary_points(spec: ProblemSpec, param_values=None) -> BoundaryPoints:
    """Equidistant IC points on the bottom edge and BC points split over both walls.

    In parameterized mode the set is repeated for every parameter value.
    """
    (x0, x1), (t0, t1) = spec.x_range, spec.t_range
    ic_x = np.linspace(x0, x1, spec.n_ic)
    nb = spec.n_bc // 2
    bt = np.linspace(t0, t1, nb)
    bc_x = np.concatenate([np.full(nb, x0), np.full(spec.n_bc - nb, x1)])
    bc_t = np.concatenate([bt, np.linspace(t0, t1, spec.n_bc - nb)])
    if not spec.parameterized:
        return BoundaryPoints(ic_x, None, bc_x, bc_t, None)
    vals = np.asarray(param_values, dtype=float)
    return BoundaryPoints(
        np.tile(ic_x, vals.size), np.repeat(vals, ic_x.size),
        np.tile(bc_x, vals.size), np.tile(bc_t, vals.size), np.repeat(vals, bc_x.size),
    )


def _ic_target(spec, x):
    if spec.kind == "wave":
        return wave_initial(x, spec.x_range[1])
    return -np.sin(np.pi * x)


def _ic_bc_terms(params, spec, pts: BoundaryPoints | None, with_grad, workspace):
    n = params.flat.size
    grad = np.zeros(n) if with_grad else None
    l_ic = l_bc = 0.0
    if spec.w_ic > 0:
        if pts is None or pts.ic_x.size == 0:
            raise ValueError("w_ic > 0 needs initial-condition points")
        x = pts.ic_x
        t = np.full(x.size, spec.t_range[0])
        b = _Batch(params, spec, x, t, pts.ic_param, (("t", 1),),
                   None if workspace is None else workspace.setdefault("ic", {}), with_grad)
        d = b.fields["u"] - _ic_target(spec, x)
        ut = b.fields["u_t"]
        # displacement and zero initial velocity share the weight
        l_ic = spec.w_ic * (np.mean(d * d) + np.mean(ut * ut))
        if with_grad:
            G = b.raw_adjoint({"u": 2.0 * spec.w_ic * d / x.size, "u_t": 2.0 * spec.w_ic * ut / x.size})
            grad += kernels.backward(params.weights, b.cache, G, np.empty(n),
                                     None if workspace is None else workspace["ic"])
    if spec.w_bc > 0:
        if pts is None or pts.bc_x.size == 0:
            raise ValueError("w_bc > 0 needs boundary-condition points")
        b = _Batch(params, spec, pts.bc_x, pts.bc_t, pts.bc_param, (),
                   None if workspace is None else workspace.setdefault("bc", {}), with_grad)
        u = b.fields["u"]
        l_bc = spec.w_bc * np.mean(u * u)
        if with_grad:
            G = b.raw_adjoint({"u": 2.0 * spec.w_bc * u / u.size})
            grad += kernels.backward(params.weights, b.cache, G, np.empty(n),
                                     None if workspace is None else workspace["bc"])
    return float(l_ic), float(l_bc), grad


def ic_bc_loss(params: NetworkParams, spec: ProblemSpec, pts: BoundaryPoints | None):
    """``(L_ic, L_bc)``, each already multiplied by its weight.

    Under the hard Burgers ansatz both weights are zero and both terms vanish.
    """
    l_ic, l_bc, _ = _ic_bc_terms(params, spec, pts, False, None)
    return l_ic, l_bc


@dataclass
class LabeledPoints:
    x: np.ndarray
    t: np.ndarray
    value: np.ndarray
    param: np.ndarray | None = None


def data_loss(params: NetworkParams, spec: ProblemSpec, data: LabeledPoints | None) -> float:
    """Mean squared prediction error on labeled points; 0 for no data."""
    if data is None or np.size(data.x) == 0:
        return 0.0
    if not np.all(np.isfinite(data.value)):
        raise ValueError("labels must be finite")
    d = predict(params, spec, data.x, data.t, data.param) - np.asarray(data.value, dtype=float)
    return float(np.mean(d * d))


@dataclass
class LossParts:
    pde: float
    ic: float
    bc: float
    data: float

    @property
    def total(self) -> float:
        return self.pde + self.ic + self.bc + self.data


def loss_and_grad(params: NetworkParams, spec: ProblemSpec, C, pts: BoundaryPoints | None = None,
                  data: LabeledPoints | None = None, workspace: dict | None = None,
                  want_residuals: bool = False):
    """Full training loss, its parameter gradient, and optionally the residuals.

    Equations are averaged separately and summed. ``workspace`` lets repeated
    calls reuse kernel buffers.
    """
    n = params.flat.size
    grad = np.zeros(n)
    tmp = np.empty(n)
    l_pde = 0.0
    res = np.zeros(len(C.x)) if want_residuals else None
    eq_all = np.asarray(C.equation_index)
    for eq in range(spec.n_equations):
        mask = eq_all == eq
        x, t, param = _points(C, eq)
        if x.size == 0:
            continue
        p = spec.param_array(param, x.size)
        ws = None if workspace is None else workspace.setdefault(("pde", eq), {})
        b = _Batch(params, spec, x, t, p, _DIRECTIONS[spec.kind], ws)
        r, dr = _residual_and_adjoint(spec, b.fields, p)
        l_pde += float(np.mean(r * r))
        scale = 2.0 * r / r.size
        G = b.raw_adjoint({k: scale * v for k, v in dr.items()})
        grad += kernels.backward(params.weights, b.cache, G, tmp, ws)
        if want_residuals:
            res[mask] = r
    l_ic, l_bc, g = _ic_bc_terms(params, spec, pts, True, workspace)
    grad += g
    l_data = 0.0
    if data is not None and np.size(data.x):
        b = _Batch(params, spec, data.x, data.t, data.param, (),
                   None if workspace is None else workspace.setdefault("data", {}))
        d = b.fields["u"] - np.asarray(data.value, dtype=float)
        l_data = float(np.mean(d * d))
        G = b.raw_adjoint({"u": 2.0 * d / d.size})
        grad += kernels.backward(params.weights, b.cache, G, tmp,
                                 None if workspace is None else workspace["data"])
    parts = LossParts(l_pde, l_ic, l_bc, l_data)
    return (parts, grad, res) if want_residuals else (parts, grad)

