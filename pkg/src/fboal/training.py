"""Adam training loop with staged learning rates and periodic resampling.

The loop runs the learning-rate stages in order. Every ``resample_period``
iterations (counted globally) the test error is measured, the collocation
set is resampled, and training stops if the measured error is below the
threshold. A run also ends when the stages are exhausted or the global cap
is hit; the final iteration is always evaluated.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import oracle, pde, sampling
from .metrics import relative_l2
from .network import NetworkParams, init_network, save_params

log = logging.getLogger(__name__)

SAMPLERS = ("static", "fboal", "rad", "rard", "rar")
DEFAULT_STAGES = ((1e-3, 50_000), (1e-4, 200_000), (1e-5, 200_000))
ALGORITHM_STAGES = ((1e-4, 50_000), (1e-5, 200_000), (1e-6, 200_000))
DIVERGENCE_LOSS = 1e6
SUMMARY_VERSION = 1


class DivergenceError(RuntimeError):
    """Loss blew up. Carries the last parameters with a finite loss and the log so far."""

    def __init__(self, message, params=None, log=None, collocation=None):
        super().__init__(message)
        self.params = params
        self.log = log
        self.collocation = collocation


@dataclass
class TrainingConfig:
    hidden: tuple[int, ...] = (50, 50, 50, 50)
    lr_stages: tuple[tuple[float, int], ...] = DEFAULT_STAGES
    resample_period: int = 2000
    swap_count: int = 20
    subdomain_count: int | None = None
    cell_size: float | None = 0.1
    budget: int = 1024
    max_iterations: int = 500_000
    threshold: float = 0.02
    sampler: str = "static"
    seed: int = 0
    collocation_seed: int = 0
    init_scheme: str = "equidistant"
    param_values: tuple[float, ...] = ()
    kappa: float = 1.0
    c: float = 1.0
    m_add: int = 5
    pool_factor: int = 10
    test_grid: tuple[int, int] = (10, 10)

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        self.lr_stages = tuple((float(lr), int(n)) for lr, n in self.lr_stages)
        self.param_values = tuple(float(v) for v in self.param_values)
        self.test_grid = tuple(int(v) for v in self.test_grid)
        self.validate()

    def validate(self) -> None:
        if not self.lr_stages:
            raise ValueError("need at least one learning-rate stage")
        rates = [lr for lr, _ in self.lr_stages]
        if any(b >= a for a, b in zip(rates, rates[1:])):
            raise ValueError(f"learning rates must strictly decrease, got {rates}")
        if any(lr <= 0 for lr in rates) or any(n < 0 for _, n in self.lr_stages):
            raise ValueError("stages need positive rates and non-negative lengths")
        if self.resample_period < 1:
            raise ValueError("resample_period must be at least 1")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if (self.subdomain_count is None) == (self.cell_size is None):
            raise ValueError("set exactly one of subdomain_count and cell_size")
        if self.subdomain_count is not None and self.swap_count > self.subdomain_count:
            raise ValueError("swap_count must not exceed subdomain_count")
        if self.swap_count < 0 or self.m_add < 0 or self.budget < 1 or self.max_iterations < 0:
            raise ValueError("counts must be non-negative and the budget positive")
        if self.kappa < 0 or self.c < 0 or self.pool_factor < 1:
            raise ValueError("kappa and c must be non-negative, pool_factor at least 1")
        if min(self.test_grid) < 2:
            raise ValueError("test grid needs at least 2 nodes per axis")

    @property
    def total_iterations(self) -> int:
        return min(self.max_iterations, sum(n for _, n in self.lr_stages))


# --- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float):
    """Bias-corrected Adam update. Updates ``params`` and ``state`` in place and returns both."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    if not np.all(np.isfinite(grads)):
        raise DivergenceError(f"non-finite gradient at Adam step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    mhat = state.m / (1.0 - b1**state.step)
    vhat = state.v / (1.0 - b2**state.step)
    params -= lr * mhat / (np.sqrt(vhat) + state.eps)
    return params, state


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: str | None = None


def stopping_check(test_error, iteration: int, cfg: TrainingConfig) -> StopDecision:
    """Stop on the iteration cap or when the test error drops below the threshold.

    The cap is the smaller of ``max_iterations`` and the total stage length. A
    sequence of errors (one per training parameter value) is summed first.
    """
    err = float(np.sum(test_error))
    if iteration >= cfg.total_iterations:
        return StopDecision(True, "cap_reached")
    if err < cfg.threshold:
        return StopDecision(True, "threshold_met")
    return StopDecision(False)


# --- log ---------------------------------------------------------------------

@dataclass
class TrainingLog:
    losses: list[float] = field(default_factory=list)
    test_errors: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    stop_reason: str | None = None
    iterations: int = 0
    wall_seconds: float = 0.0

    @property
    def resample_count(self) -> int:
        return len(self.events)

    def records(self):
        """Event records in iteration order, for the JSON-lines file."""
        out = [{"type": "test", **r} for r in self.test_errors]
        out += [{"type": "resample", **e} for e in self.events]
        out.sort(key=lambda r: (r["iteration"], r["type"] != "test"))
        out.append({"type": "stop", "iteration": self.iterations, "reason": self.stop_reason})
        return out


# --- training ------------------------------------------------------------------

def _assert_disjoint(C, test_points) -> None:
    tx, tt, tp = test_points
    if C.param is None:
        clash = set(zip(C.x.tolist(), C.t.tolist())).intersection(zip(tx.tolist(), tt.tolist()))
    else:
        pts = set(zip(C.x.tolist(), C.t.tolist(), C.param.tolist()))
        clash = pts.intersection(zip(tx.tolist(), tt.tolist(), tp.tolist()))
    if clash:
        raise AssertionError(f"{len(clash)} collocation points coincide with test nodes")


class _TestSet:
    """Test grid nodes and reference values for every training parameter value."""

    def __init__(self, spec, cfg):
        grid = oracle.make_grid(spec, *cfg.test_grid, "test")
        self.x, self.t = grid.points()
        self.values = list(cfg.param_values) if spec.parameterized else [spec.param_value]
        self.refs = [oracle.reference_field(spec, grid, v) for v in self.values]

    def errors(self, params, spec) -> list[float]:
        out = []
        for v, ref in zip(self.values, self.refs):
            p = np.full(self.x.size, v) if spec.parameterized else None
            out.append(relative_l2(pde.predict(params, spec, self.x, self.t, p), ref))
        return out

    def points(self):
        k = len(self.values)
        return np.tile(self.x, k), np.tile(self.t, k), np.repeat(self.values, self.x.size)


def _counts(C):
    return {repr(k): v for k, v in C.counts_per_param().items()}


def train(spec, cfg: TrainingConfig, on_event=None):
    """Train one network. Returns ``(params, TrainingLog, final collocation set)``.

    ``on_event(kind, iteration, C)`` is called with ``"init"`` and after every
    resample, for snapshot writers.
    """
    if spec.parameterized and not cfg.param_values:
        raise ValueError("parameterized problems need param_values")
    t_start = time.perf_counter()
    layers = (spec.n_inputs, *cfg.hidden, 1)
    params = init_network(layers, cfg.seed)
    C = sampling.init_collocation(spec, cfg.budget, cfg.param_values or None, cfg.init_scheme,
                                  cfg.collocation_seed)
    pts = pde.boundary_points(spec, cfg.param_values or None) if not spec.hard_constrained else None
    grid = sampling.build_grid(spec, cell_size=cfg.cell_size, d=cfg.subdomain_count)
    if cfg.sampler == "fboal" and cfg.swap_count > grid.d:
        raise ValueError(f"swap_count {cfg.swap_count} exceeds d={grid.d}")
    tests = _TestSet(spec, cfg)
    test_points = tests.points()
    _assert_disjoint(C, test_points)
    rng = np.random.default_rng([cfg.seed, 7])
    state = AdamState.zeros(params.flat.size)
    tlog = TrainingLog()
    ws: dict = {}
    pool_ws: dict = {}
    last_good = params.flat.copy()
    if on_event:
        on_event("init", 0, C)

    def residual_fn(x, t, p):
        return pde.residuals(params, spec, x, t, p, workspace=pool_ws)

    it = 0
    k = cfg.resample_period
    cap = cfg.total_iterations
    with threadpool_limits(limits=1):
        for lr, n_iter in cfg.lr_stages:
            stage_end = min(it + n_iter, cap)
            while it < stage_end:
                parts, grad = pde.loss_and_grad(params, spec, C, pts, workspace=ws)
                loss = parts.total
                if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
                    params.flat[...] = last_good
                    tlog.iterations = it
                    tlog.stop_reason = "diverged"
                    tlog.wall_seconds = time.perf_counter() - t_start
                    raise DivergenceError(f"loss {loss!r} at iteration {it}", params, tlog, C)
                last_good[...] = params.flat
                tlog.losses.append(loss)
                try:
                    adam_step(params.flat, grad, state, lr)
                except DivergenceError as exc:
                    params.flat[...] = last_good
                    tlog.iterations = it
                    tlog.stop_reason = "diverged"
                    raise DivergenceError(str(exc), params, tlog, C) from None
                it += 1
                if it % k and it < cap:
                    continue
                errs = tests.errors(params, spec)
                tlog.test_errors.append({"iteration": it, "error": float(np.sum(errs)),
                                         "per_param": errs})
                if it % k == 0 and cfg.sampler != "static":
                    C = _resample(C, spec, cfg, grid, residual_fn, rng, it)
                    ws.clear()
                    _assert_disjoint(C, test_points)
                    tlog.events.append({"iteration": it, "n_points": len(C), "counts": _counts(C)})
                    if on_event:
                        on_event("resample", it, C)
                decision = stopping_check(errs, it, cfg)
                if decision.stop:
                    tlog.stop_reason = decision.reason
                    break
            if tlog.stop_reason:
                break
    if tlog.stop_reason is None:
        tlog.stop_reason = "cap_reached"
    tlog.iterations = it
    tlog.wall_seconds = time.perf_counter() - t_start
    return params, tlog, C


def _resample(C, spec, cfg, grid, residual_fn, rng, it):
    if cfg.sampler == "fboal":
        C, _ = sampling.fboal_resample(C, spec, grid, residual_fn, cfg.swap_count, rng, it,
                                       cfg.pool_factor)
    elif cfg.sampler == "rad":
        C = sampling.rad_resample(C, spec, residual_fn, cfg.kappa, cfg.c, cfg.pool_factor, rng)
    elif cfg.sampler == "rard":
        C = sampling.rard_add(C, spec, residual_fn, cfg.kappa, cfg.c, cfg.m_add, rng, cfg.pool_factor)
    else:
        C = sampling.rar_add(C, spec, residual_fn, cfg.m_add, rng, cfg.pool_factor)
    return C


def validation_errors(params: NetworkParams, spec, values=None, nx=256, nt=100) -> dict[str, float]:
    """Relative L2 error on the validation grid, keyed by ``repr`` of the parameter value."""
    grid = oracle.make_grid(spec, nx, nt, "validation")
    x, t = grid.points()
    vals = list(values) if spec.parameterized else [spec.param_value]
    out = {}
    for v in vals:
        p = np.full(x.size, v) if spec.parameterized else None
        out[repr(float(v))] = relative_l2(pde.predict(params, spec, x, t, p),
                                          oracle.reference_field(spec, grid, v))
    return out


def summary_record(tlog: TrainingLog, cfg: TrainingConfig, validation: dict, C) -> dict:
    """Deterministic run summary (no wall time; that goes to a separate timing file)."""
    return {
        "version": SUMMARY_VERSION,
        "seed": cfg.seed,
        "sampler": cfg.sampler,
        "iterations": tlog.iterations,
        "resamples": tlog.resample_count,
        "stop_reason": tlog.stop_reason,
        "final_test_error": tlog.test_errors[-1]["error"] if tlog.test_errors else None,
        "final_loss": tlog.losses[-1] if tlog.losses else None,
        "validation_error": validation,
        "n_points": len(C),
        "counts_per_param": _counts(C),
        "config": asdict(cfg),
    }


def write_artifacts(out_dir: str | Path, params, tlog: TrainingLog, summary: dict | None) -> None:
    """Log (JSON lines), loss trace, parameters, summary and timing files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "log.jsonl", "w") as fh:
        for r in tlog.records():
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    with open(out / "loss.csv", "w") as fh:
        fh.write("iteration,loss\n")
        fh.writelines(f"{i},{v!r}\n" for i, v in enumerate(tlog.losses))
    if params is not None:
        save_params(params, out / "params.txt")
    if summary is not None:
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"wall_seconds": tlog.wall_seconds}) + "\n")
