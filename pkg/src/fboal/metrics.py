"""Error metrics, multi-seed aggregation and point-density histograms."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def relative_l2(pred, ref) -> float:
    """``||ref - pred|| / ||ref||`` in the Euclidean norm."""
    pred = np.asarray(pred, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if pred.shape != ref.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {ref.size}")
    denom = np.linalg.norm(ref)
    if denom == 0:
        raise ValueError("reference field has zero norm")
    return float(np.linalg.norm(ref - pred) / denom)


def amplitude_relative_l2(pred, ref) -> float:
    """``||ref - pred|| / (max(ref) - min(ref))``.

    Not normalized by length: n points each off by ``e`` on a unit-range
    field give ``e * sqrt(n)``.
    """
    pred = np.asarray(pred, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if pred.shape != ref.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {ref.size}")
    amp = ref.max() - ref.min() if ref.size else 0.0
    if amp <= 0:
        raise ValueError("reference field is constant")
    return float(np.linalg.norm(ref - pred) / amp)


def aggregate_runs(values) -> tuple[float, float]:
    """Geometric mean and the population standard deviation of the raw values."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("nothing to aggregate")
    if np.any(v <= 0):
        raise ValueError("geometric mean needs positive values")
    g = math.exp(math.fsum(np.log(v)) / v.size)
    # exact for identical inputs, where exp(log v) can drift by an ulp
    if np.all(v == v[0]):
        g = float(v[0])
    return g, float(np.std(v))


@dataclass
class RunSummary:
    seed: int
    errors: dict[str, float]
    iterations: int
    resamples: int
    wall_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if any(e < 0 for e in self.errors.values()):
            raise ValueError("errors must be non-negative")
        if self.iterations < 0 or self.resamples < 0:
            raise ValueError("counts must be non-negative")


def point_density(points, axis: str = "x", bins: int = 20, value_range=None, strip=None):
    """Normalized histogram of point coordinates along ``axis``.

    ``points`` is anything with ``x`` and ``t`` (a collocation set, or a
    snapshot dict). ``strip=(other_lo, other_hi)`` keeps only points whose
    other coordinate lies in that band. Returns ``(edges, density)`` with
    ``density`` summing to 1 (all zeros when no point qualifies).
    """
    if bins < 1:
        raise ValueError("bins must be at least 1")
    if axis not in ("x", "t"):
        raise ValueError("axis must be 'x' or 't'")
    get = (lambda k: points[k]) if isinstance(points, dict) else (lambda k: getattr(points, k))
    v = np.asarray(get(axis), dtype=float)
    if strip is not None:
        o = np.asarray(get("t" if axis == "x" else "x"), dtype=float)
        v = v[(o >= strip[0]) & (o <= strip[1])]
    if value_range is None:
        value_range = (v.min(), v.max()) if v.size else (0.0, 1.0)
        if value_range[0] == value_range[1]:
            value_range = (value_range[0] - 0.5, value_range[1] + 0.5)
    counts, edges = np.histogram(v, bins=bins, range=value_range)
    total = counts.sum()
    density = counts / total if total else counts.astype(float)
    return edges, density


def write_histogram_csv(path: str | Path, edges, density) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "density"])
        for lo, hi, d in zip(edges[:-1], edges[1:], density):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(d))])


def write_error_table(path: str | Path, rows: dict[str, dict[str, float]]) -> None:
    """Rows are methods, columns are fields (or parameter values)."""
    cols = sorted({c for r in rows.values() for c in r}, key=str)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", *cols])
        for name, r in rows.items():
            w.writerow([name, *(repr(float(r[c])) if c in r else "" for c in cols)])
