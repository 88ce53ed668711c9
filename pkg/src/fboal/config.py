"""Experiment configuration: INI files, presets and desk-scale shrinking.

A config file has the sections ``[problem]``, ``[training]``, ``[samplers]``
and ``[run]``. Every key is one :class:`ExperimentConfig` field. Lists are
comma-separated. Learning-rate stages are written ``rate:iterations``.
Writing a parsed config back out gives its canonical text.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, fields, replace

import numpy as np

from . import pde
from .training import DEFAULT_STAGES, SAMPLERS, TrainingConfig


class ConfigError(ValueError):
    pass


SECTIONS = {
    "problem": ("kind", "parameterized", "values", "param_range", "w_ic", "w_bc", "n_ic", "n_bc"),
    "training": ("hidden", "lr_stages", "max_iterations", "threshold", "budget", "init_scheme",
                 "collocation_seed", "test_grid"),
    "samplers": ("samplers", "resample_period", "swap_count", "subdomain_count", "cell_size",
                 "pool_factor", "rad_kappa", "rad_c", "rard_kappa", "rard_c", "m_add"),
    "run": ("seeds", "scale", "jobs"),
}


@dataclass
class ExperimentConfig:
    kind: str = "burgers"
    parameterized: bool = False
    # fixed mode: one independent run per value; parameterized: the training values
    values: tuple[float, ...] = (0.0025,)
    param_range: tuple[float, ...] = ()
    w_ic: float = 1.0
    w_bc: float = 1.0
    n_ic: int = 512
    n_bc: int = 512
    hidden: tuple[int, ...] = (50, 50, 50, 50)
    lr_stages: tuple[tuple[float, int], ...] = DEFAULT_STAGES
    max_iterations: int = 500_000
    threshold: float = 0.02
    budget: int = 1024
    init_scheme: str = "equidistant"
    collocation_seed: int = 0
    test_grid: tuple[int, ...] = (10, 10)
    samplers: tuple[str, ...] = ("fboal",)
    resample_period: int = 2000
    swap_count: int = 20
    # 0 selects square cells of cell_size instead
    subdomain_count: int = 0
    cell_size: float = 0.1
    pool_factor: int = 10
    rad_kappa: float = 1.0
    rad_c: float = 1.0
    rard_kappa: float = 2.0
    rard_c: float = 0.0
    m_add: int = 5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    scale: float = 1.0
    jobs: int = 1

    def __post_init__(self) -> None:
        self.values = tuple(float(v) for v in self.values)
        self.param_range = tuple(float(v) for v in self.param_range)
        self.hidden = tuple(int(v) for v in self.hidden)
        self.lr_stages = tuple((float(a), int(b)) for a, b in self.lr_stages)
        self.test_grid = tuple(int(v) for v in self.test_grid)
        self.samplers = tuple(self.samplers)
        self.seeds = tuple(int(s) for s in self.seeds)

    def validate(self) -> "ExperimentConfig":
        """Check every module precondition before anything runs."""
        try:
            if self.kind not in ("burgers", "wave"):
                raise ConfigError(f"unknown problem kind {self.kind!r}")
            if not self.values:
                raise ConfigError("need at least one parameter value")
            if not self.samplers:
                raise ConfigError("need at least one sampler")
            for s in self.samplers:
                if s not in SAMPLERS:
                    raise ConfigError(f"unknown sampler {s!r}")
            if not 0 < self.scale <= 1:
                raise ConfigError("scale must lie in (0, 1]")
            if self.jobs < 1:
                raise ConfigError("jobs must be at least 1")
            if self.parameterized and len(self.param_range) != 2:
                raise ConfigError("parameterized runs need param_range = low, high")
            self.problem_specs()
            for s in self.samplers:
                self.training_config(s, 0)
            if self.parameterized:
                lo, hi = self.param_range
                if any(v < lo or v > hi for v in self.values):
                    raise ConfigError("training values must lie inside param_range")
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def problem_specs(self):
        """``[(ProblemSpec, label)]``: one per value in fixed mode, a single one otherwise."""
        def make(value=None, rng=None):
            if self.kind == "burgers":
                return pde.burgers_problem(value, rng)
            return pde.wave_problem(value, rng, self.w_ic, self.w_bc, self.n_ic, self.n_bc)

        if self.parameterized:
            return [(make(None, tuple(self.param_range)), "param")]
        name = "nu" if self.kind == "burgers" else "c2"
        return [(make(v), f"{name}={v!r}") for v in self.values]

    def training_config(self, sampler: str, seed: int) -> TrainingConfig:
        kappa, c = (self.rard_kappa, self.rard_c) if sampler == "rard" else (self.rad_kappa, self.rad_c)
        return TrainingConfig(
            hidden=self.hidden, lr_stages=self.lr_stages, resample_period=self.resample_period,
            swap_count=self.swap_count,
            subdomain_count=self.subdomain_count or None,
            cell_size=None if self.subdomain_count else self.cell_size,
            budget=self.budget, max_iterations=self.max_iterations, threshold=self.threshold,
            sampler=sampler, seed=seed, collocation_seed=self.collocation_seed,
            init_scheme=self.init_scheme, param_values=self.values if self.parameterized else (),
            kappa=kappa, c=c, m_add=self.m_add, pool_factor=self.pool_factor,
            test_grid=self.test_grid,
        )


# --- INI round trip ---------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join(f"{a!r}:{b}" for a, b in v)
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() not in ("true", "false"):
            raise ConfigError(f"{name}: expected true or false, got {text!r}")
        return text.lower() == "true"
    if name == "lr_stages":
        out = []
        for item in filter(None, (s.strip() for s in text.split(","))):
            rate, _, n = item.partition(":")
            out.append((float(rate), int(n)))
        return tuple(out)
    if isinstance(default, tuple):
        items = [s.strip() for s in text.split(",") if s.strip()]
        if name == "samplers":
            return tuple(items)
        conv = int if name in ("hidden", "test_grid", "seeds") else float
        return tuple(conv(s) for s in items)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def to_ini(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for section, keys in SECTIONS.items():
        cp[section] = {k: _fmt(getattr(cfg, k)) for k in keys}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def from_ini(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    defaults = ExperimentConfig()
    known = {k: s for s, keys in SECTIONS.items() for k in keys}
    kw = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, text in cp[section].items():
            if known.get(key) != section:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                kw[key] = _parse(key, text, getattr(defaults, key))
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
    return ExperimentConfig(**kw)


def load(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            return from_ini(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc


# --- presets and scaling -----------------------------------------------------------

WAVE_STAGES = ((1e-3, 50_000), (1e-4, 125_000), (1e-5, 125_000))
_BURGERS_NU = tuple(float(v) for v in np.linspace(0.0025, 0.0124, 10))


def _burgers_param_values(n):
    return tuple(float(v) for v in np.linspace(0.0025, 0.0124, n))


PRESETS = {
    "burgers-fixed-fboal": ExperimentConfig(values=_BURGERS_NU),
    "burgers-fixed-compare": ExperimentConfig(values=_BURGERS_NU,
                                              samplers=("static", "fboal", "rad", "rard")),
    "burgers-param": ExperimentConfig(
        parameterized=True, values=_burgers_param_values(40), param_range=(0.0025, 0.0124),
        max_iterations=2_000_000, threshold=0.8, swap_count=200, m_add=200),
    "wave-fixed": ExperimentConfig(
        kind="wave", values=tuple(float(v) for v in np.linspace(1.0, 3.0, 11)),
        lr_stages=WAVE_STAGES, max_iterations=300_000, threshold=0.005, resample_period=1000,
        swap_count=10, subdomain_count=196, cell_size=0.0),
    "wave-param": ExperimentConfig(
        kind="wave", parameterized=True, values=tuple(float(v) for v in np.linspace(1.0, 3.0, 41)),
        param_range=(1.0, 3.0), max_iterations=2_000_000, threshold=0.205, resample_period=5000,
        swap_count=196, subdomain_count=196, cell_size=0.0, m_add=205),
    "algorithm-schedule": ExperimentConfig(lr_stages=((1e-4, 50_000), (1e-5, 200_000), (1e-6, 200_000))),
}

# per-value threshold floor used whenever scale < 1. Scaled Burgers runs already
# reach the full-scale 0.02 on the test mesh, so only the wave target is relaxed.
DESK_THRESHOLD = {"burgers": 0.02, "wave": 0.01}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return dataclasses.replace(PRESETS[name])


def apply_scale(cfg: ExperimentConfig, scale: float) -> ExperimentConfig:
    """Shrink stage lengths and the cap by ``scale``; relax the threshold below full scale.

    The resampling period is left alone, so a scaled run sees proportionally
    fewer resampling events.
    """
    if not 0 < scale <= 1:
        raise ConfigError("scale must lie in (0, 1]")
    if scale == 1:
        return replace(cfg, scale=1.0)
    stages = tuple((lr, max(1, int(round(n * scale)))) for lr, n in cfg.lr_stages)
    n_vals = len(cfg.values) if cfg.parameterized else 1
    return replace(cfg, lr_stages=stages, max_iterations=max(1, int(round(cfg.max_iterations * scale))),
                   threshold=max(cfg.threshold, DESK_THRESHOLD[cfg.kind] * n_vals), scale=float(scale))


def field_names() -> list[str]:
    return [f.name for f in fields(ExperimentConfig)]
