"""Collocation sets and the adaptive resampling strategies.

Every point carries a unique integer id in insertion order. Ties are broken
by that id, or by pool position for candidates, so every strategy is
deterministic given its seed and the order of the set.

``residual_fn(x, t, param)`` is any callable that returns residuals for
arrays of points. ``param`` is None for fixed-parameter problems.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)


@dataclass
class CollocationSet:
    x: np.ndarray
    t: np.ndarray
    param: np.ndarray | None
    equation_index: np.ndarray
    ids: np.ndarray
    budget: int
    param_values: np.ndarray | None = None
    next_id: int = field(default=-1)

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        if self.param is not None:
            self.param = np.asarray(self.param, dtype=float)
        self.equation_index = np.asarray(self.equation_index, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        n = self.x.size
        for a in (self.t, self.equation_index, self.ids) + ((self.param,) if self.param is not None else ()):
            if a.shape != (n,):
                raise ValueError("collocation columns must have equal length")
        if self.next_id < 0:
            self.next_id = int(self.ids.max()) + 1 if n else 0

    def __len__(self) -> int:
        return self.x.size

    def subset(self, idx) -> "CollocationSet":
        """Rows ``idx`` as a new set (ids preserved)."""
        idx = np.asarray(idx)
        if idx.size == 0:
            idx = idx.astype(np.intp)
        return CollocationSet(self.x[idx], self.t[idx], None if self.param is None else self.param[idx],
                              self.equation_index[idx], self.ids[idx], self.budget, self.param_values,
                              self.next_id)

    def copy(self) -> "CollocationSet":
        return self.subset(np.arange(len(self)))

    def counts_per_param(self) -> dict[float, int]:
        if self.param is None:
            return {}
        out = {float(v): 0 for v in self.param_values}
        vals, counts = np.unique(self.param, return_counts=True)
        out.update({float(v): int(c) for v, c in zip(vals, counts)})
        return out


def _candidates(x, t, param, eq) -> CollocationSet:
    # candidate pools are sets too; ids are their pool positions
    n = len(x)
    return CollocationSet(x, t, param, eq, np.arange(n), n)


def _append(C: CollocationSet, new: CollocationSet) -> CollocationSet:
    ids = np.arange(C.next_id, C.next_id + len(new))
    param = None if C.param is None else np.concatenate([C.param, new.param])
    return CollocationSet(np.concatenate([C.x, new.x]), np.concatenate([C.t, new.t]), param,
                          np.concatenate([C.equation_index, new.equation_index]),
                          np.concatenate([C.ids, ids]), C.budget, C.param_values, C.next_id + len(new))


def _square_factors(n: int, aspect: float = 1.0) -> tuple[int, int]:
    """Factor ``n = a*b`` so that cells of an ``aspect`` (width/height) box are squarest."""
    best, best_cost = (n, 1), math.inf
    for b in range(1, n + 1):
        if n % b:
            continue
        a = n // b
        cost = abs(math.log((aspect / a) / (1.0 / b)))
        if cost < best_cost - 1e-12:
            best, best_cost = (a, b), cost
    return best


def init_collocation(spec, n_per_param: int, param_values=None, scheme: str = "equidistant",
                     seed=0) -> CollocationSet:
    """Initial set: ``n_per_param`` points for each parameter value.

    The equidistant scheme puts points at the centres of an ``a x b`` grid of
    equal cells, with ``a*b = n_per_param`` and ``a``, ``b`` as close as
    possible (1024 gives 32 x 32). Centres stay off the box edges, so the set is
    disjoint from closed-box evaluation grids.
    """
    if n_per_param < 1:
        raise ValueError("n_per_param must be at least 1")
    if scheme not in ("equidistant", "uniform_random"):
        raise ValueError(f"unknown scheme {scheme!r}")
    (x0, x1), (t0, t1) = spec.x_range, spec.t_range
    if spec.parameterized:
        if param_values is None or len(param_values) == 0:
            raise ValueError("parameterized problems need training parameter values")
        pv = np.asarray(param_values, dtype=float)
        lo, hi = spec.param_range
        if np.any(pv < lo - 1e-12) or np.any(pv > hi + 1e-12):
            raise ValueError("parameter values must lie in the parameter range")
    else:
        pv = None
    n_blocks = 1 if pv is None else pv.size
    rng = np.random.default_rng(seed)
    xs, ts = [], []
    for _ in range(n_blocks):
        if scheme == "equidistant":
            a, b = _square_factors(n_per_param)
            gx = x0 + (np.arange(a) + 0.5) * (x1 - x0) / a
            gt = t0 + (np.arange(b) + 0.5) * (t1 - t0) / b
            X, T = np.meshgrid(gx, gt, indexing="ij")
            xs.append(X.ravel())
            ts.append(T.ravel())
        else:
            xs.append(rng.uniform(x0, x1, n_per_param))
            ts.append(rng.uniform(t0, t1, n_per_param))
    n = n_per_param * n_blocks
    param = None if pv is None else np.repeat(pv, n_per_param)
    return CollocationSet(np.concatenate(xs), np.concatenate(ts), param, np.zeros(n, np.int64),
                          np.arange(n), n, pv)


@dataclass(frozen=True)
class SubdomainGrid:
    x_edges: np.ndarray
    t_edges: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.x_edges.size - 1, self.t_edges.size - 1

    @property
    def d(self) -> int:
        return (self.x_edges.size - 1) * (self.t_edges.size - 1)

    def cell_of(self, x, t) -> np.ndarray:
        """Flat cell index; cells are half-open except the last in each axis."""
        nx, nt = self.shape
        ix = np.clip(np.searchsorted(self.x_edges, x, side="right") - 1, 0, nx - 1)
        it = np.clip(np.searchsorted(self.t_edges, t, side="right") - 1, 0, nt - 1)
        return ix * nt + it


def build_grid(spec, cell_size: float | None = None, d: int | None = None) -> SubdomainGrid:
    """Tile the (x, t) box by square cells of ``cell_size`` or into ``d`` cells."""
    (x0, x1), (t0, t1) = spec.x_range, spec.t_range
    if (cell_size is None) == (d is None):
        raise ValueError("give exactly one of cell_size and d")
    if cell_size is not None:
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        nx, nt = (x1 - x0) / cell_size, (t1 - t0) / cell_size
        if abs(nx - round(nx)) > 1e-9 or abs(nt - round(nt)) > 1e-9:
            raise ValueError(f"cell size {cell_size} does not tile the box")
        nx, nt = int(round(nx)), int(round(nt))
    else:
        if d < 1:
            raise ValueError("d must be at least 1")
        nx, nt = _square_factors(int(d), (x1 - x0) / (t1 - t0))
    return SubdomainGrid(np.linspace(x0, x1, nx + 1), np.linspace(t0, t1, nt + 1))


def candidate_pool(spec, C: CollocationSet, seed=None, factor: int = 10) -> CollocationSet:
    """``factor * |C|`` uniform candidates over the box (and training parameter values).

    Equation tags are dealt round-robin in the same proportions as ``C``.
    """
    rng = np.random.default_rng(seed)
    n = factor * len(C)
    (x0, x1), (t0, t1) = spec.x_range, spec.t_range
    x = rng.uniform(x0, x1, n)
    t = rng.uniform(t0, t1, n)
    param = None
    if C.param is not None:
        param = C.param_values[rng.integers(0, len(C.param_values), n)]
    n_eq = int(C.equation_index.max()) + 1 if len(C) else 1
    return _candidates(x, t, param, np.arange(n) % n_eq)


@dataclass
class ResamplePlan:
    added: np.ndarray    # positions in the candidate pool
    removed: np.ndarray  # positions in C
    iteration: int = 0

    def __len__(self) -> int:
        return self.added.size


def _cell_extremes(cells, mag, order_key, largest):
    """Per occupied cell, the position of its largest (or smallest) magnitude."""
    if cells.size == 0:
        return np.zeros(0, np.int64)
    primary = -mag if largest else mag
    order = np.lexsort((order_key, primary, cells))
    _, first = np.unique(cells[order], return_index=True)
    return order[first]


def _ranked(pos, mag, order_key, m, largest):
    primary = -mag[pos] if largest else mag[pos]
    order = np.lexsort((order_key[pos], primary))
    return pos[order[:m]]


def fboal_step(C: CollocationSet, Cp: CollocationSet, grid: SubdomainGrid, residual_fn=None,
               m: int = 0, r_C=None, r_Cp=None, iteration: int = 0) -> ResamplePlan:
    """One add/remove decision on a single equation subset.

    In each cell, the candidate with the largest |residual| goes into A and
    the member of ``C`` with the smallest |residual| into R. The plan adds the
    ``m`` largest of A and removes the ``m`` smallest of R (ties by id / pool
    position). When fewer than ``m`` cells are occupied, both sides shrink to
    the same size so the budget is kept.

    Residuals may be supplied directly as ``r_C`` / ``r_Cp``.
    """
    if m < 0:
        raise ValueError("m must be non-negative")
    if m > grid.d:
        raise ValueError(f"m={m} exceeds the number of sub-domains d={grid.d}")
    empty = ResamplePlan(np.zeros(0, np.int64), np.zeros(0, np.int64), iteration)
    if m == 0 or len(C) == 0 or len(Cp) == 0:
        return empty
    if r_C is None:
        r_C = residual_fn(C.x, C.t, C.param)
    if r_Cp is None:
        r_Cp = residual_fn(Cp.x, Cp.t, Cp.param)
    aC, aP = np.abs(np.asarray(r_C, dtype=float)), np.abs(np.asarray(r_Cp, dtype=float))
    A = _cell_extremes(grid.cell_of(Cp.x, Cp.t), aP, Cp.ids, largest=True)
    R = _cell_extremes(grid.cell_of(C.x, C.t), aC, C.ids, largest=False)
    k = min(m, A.size, R.size)
    if k < m:
        log.info("fboal: only %d candidate cells and %d member cells, swapping %d of %d",
                 A.size, R.size, k, m)
    return ResamplePlan(_ranked(A, aP, Cp.ids, k, True), _ranked(R, aC, C.ids, k, False), iteration)


def apply_plan(C: CollocationSet, Cp: CollocationSet, plan: ResamplePlan) -> CollocationSet:
    """Drop ``plan.removed`` from ``C`` and append the added candidates with fresh ids."""
    keep = np.ones(len(C), bool)
    keep[plan.removed] = False
    return _append(C.subset(np.flatnonzero(keep)), Cp.subset(plan.added))


def fboal_resample(C: CollocationSet, spec, grid: SubdomainGrid, residual_fn, m: int, seed=None,
                   iteration: int = 0, pool_factor: int = 10):
    """Fresh pool, per-equation plans with ``m // n_equations`` swaps each, applied.

    Returns the new set and the list of plans (positions refer to the old
    set and the pool).
    """
    Cp = candidate_pool(spec, C, seed, pool_factor)
    r_C = residual_fn(C.x, C.t, C.param)
    r_P = residual_fn(Cp.x, Cp.t, Cp.param)
    n_eq = int(C.equation_index.max()) + 1 if len(C) else 1
    m_eq = m // n_eq
    added, removed, plans = [], [], []
    for e in range(n_eq):
        ci = np.flatnonzero(C.equation_index == e)
        pi = np.flatnonzero(Cp.equation_index == e)
        plan = fboal_step(C.subset(ci), Cp.subset(pi), grid, None, m_eq, r_C[ci], r_P[pi], iteration)
        plan = ResamplePlan(pi[plan.added], ci[plan.removed], iteration)
        plans.append(plan)
        added.append(plan.added)
        removed.append(plan.removed)
    merged = ResamplePlan(np.concatenate(added), np.concatenate(removed), iteration)
    return apply_plan(C, Cp, merged), plans


# --- residual-distribution samplers -------------------------------------------------

def rad_weights(residuals, kappa: float, c: float) -> np.ndarray:
    """``eps^kappa / mean(eps^kappa) + c`` with ``eps = |residual|``, computed in log space."""
    if kappa < 0 or c < 0:
        raise ValueError("kappa and c must be non-negative")
    eps = np.abs(np.asarray(residuals, dtype=float))
    n = eps.size
    if n == 0:
        return eps
    if kappa == 0:
        return np.full(n, 1.0 + c)
    with np.errstate(divide="ignore"):
        le = kappa * np.log(eps)
    if not np.isfinite(le).any():
        return np.full(n, c)
    return np.exp(le - logsumexp(le) + math.log(n)) + c


def _weighted_pick(w, size, rng):
    """``size`` distinct positions drawn with probabilities proportional to ``w``."""
    n = w.size
    if size == 0:
        return np.zeros(0, np.int64)
    if size > n:
        raise ValueError(f"cannot draw {size} distinct points from {n}")
    if not np.any(w > 0):
        log.warning("all sampling weights are zero; falling back to uniform")
        return rng.choice(n, size, replace=False)
    nz = np.count_nonzero(w > 0)
    if nz < size:
        log.warning("only %d points have positive weight; topping up uniformly", nz)
        first = np.flatnonzero(w > 0)
        rest = rng.choice(np.flatnonzero(w <= 0), size - nz, replace=False)
        return np.concatenate([first, rest])
    return rng.choice(n, size, replace=False, p=w / w.sum())


def _pool_for(spec, C, pool, pool_factor, rng):
    if pool is not None:
        return pool
    return candidate_pool(spec, C, rng, pool_factor)


def rad_resample(C: CollocationSet, spec, residual_fn, kappa: float = 1.0, c: float = 1.0,
                 pool_factor: int = 10, seed=None, pool: CollocationSet | None = None) -> CollocationSet:
    """Redraw all of ``C`` from a dense pool with the residual density, without replacement.

    Each equation subset is redrawn from the candidates tagged for it, so the
    subset sizes are preserved.
    """
    rng = np.random.default_rng(seed)
    Cp = _pool_for(spec, C, pool, pool_factor, rng)
    r = residual_fn(Cp.x, Cp.t, Cp.param)
    picks = []
    for e in np.unique(C.equation_index):
        pi = np.flatnonzero(Cp.equation_index == e)
        need = int(np.count_nonzero(C.equation_index == e))
        w = rad_weights(r[pi], kappa, c)
        picks.append(pi[_weighted_pick(w, need, rng)])
    new = Cp.subset(np.concatenate(picks) if picks else np.zeros(0, np.int64))
    ids = np.arange(C.next_id, C.next_id + len(new))
    return CollocationSet(new.x, new.t, new.param, new.equation_index, ids, C.budget,
                          C.param_values, C.next_id + len(new))


def rard_add(C: CollocationSet, spec, residual_fn, kappa: float = 2.0, c: float = 0.0,
             m_add: int = 5, seed=None, pool_factor: int = 10,
             pool: CollocationSet | None = None) -> CollocationSet:
    """Append ``m_add`` pool points drawn with the residual density."""
    if m_add < 0:
        raise ValueError("m_add must be non-negative")
    if m_add == 0:
        return C
    rng = np.random.default_rng(seed)
    Cp = _pool_for(spec, C, pool, pool_factor, rng)
    w = rad_weights(residual_fn(Cp.x, Cp.t, Cp.param), kappa, c)
    return _append(C, Cp.subset(_weighted_pick(w, m_add, rng)))


def rar_add(C: CollocationSet, spec, residual_fn, m_add: int = 5, seed=None, pool_factor: int = 10,
            pool: CollocationSet | None = None) -> CollocationSet:
    """Append the ``m_add`` largest-|residual| points of a fresh pool."""
    if m_add < 0:
        raise ValueError("m_add must be non-negative")
    if m_add == 0:
        return C
    rng = np.random.default_rng(seed)
    Cp = _pool_for(spec, C, pool, pool_factor, rng)
    a = np.abs(residual_fn(Cp.x, Cp.t, Cp.param))
    top = np.lexsort((np.arange(a.size), -a))[:m_add]
    return _append(C, Cp.subset(top))


def split_per_equation(C: CollocationSet, n_equations: int) -> CollocationSet:
    """Tag points round-robin with equation indices ``0..n_equations-1``."""
    if n_equations < 1:
        raise ValueError("n_equations must be at least 1")
    if len(C) % n_equations:
        log.info("%d points do not split evenly into %d equations", len(C), n_equations)
    out = C.copy()
    out.equation_index = np.arange(len(C)) % n_equations
    return out


# --- snapshots ----------------------------------------------------------------------

SNAPSHOT_HEADER = ["x", "t", "param", "equation_index", "iteration"]


def write_snapshot(path: str | Path, C: CollocationSet, iteration: int, append: bool = False) -> None:
    """Write (or append) one CSV block; ``param`` is empty for fixed problems."""
    path = Path(path)
    new = not append or not path.exists()
    with open(path, "w" if new else "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(SNAPSHOT_HEADER)
        for i in range(len(C)):
            p = "" if C.param is None else repr(float(C.param[i]))
            w.writerow([repr(float(C.x[i])), repr(float(C.t[i])), p, int(C.equation_index[i]), iteration])


def read_snapshots(path: str | Path) -> dict[int, dict[str, np.ndarray]]:
    """Snapshot CSV grouped by iteration: ``{iteration: {"x", "t", "param", "equation_index"}}``."""
    rows: dict[int, list] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["iteration"]), []).append(r)
    out = {}
    for it, rs in rows.items():
        out[it] = {
            "x": np.array([float(r["x"]) for r in rs]),
            "t": np.array([float(r["t"]) for r in rs]),
            "param": np.array([float(r["param"]) if r["param"] else np.nan for r in rs]),
            "equation_index": np.array([int(r["equation_index"]) for r in rs]),
        }
    return out
