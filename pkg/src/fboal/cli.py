"""Command-line experiment runner.

Verbs: ``run``, ``compare``, ``sweep``, ``export-density`` and
``show-config``. Exit status is 0 on success, 2 for an invalid config and 3
when a run diverged (its partial artifacts are kept).

Artifact tree under ``--out``::

    config.ini                          canonical config (unscaled) + scale
    summary.csv                         one row per sampler/problem/seed/value
    comparison.csv                      compare only: aggregated per sampler
    <sampler>/<problem>/seed<N>/
        summary.json  timing.json  log.jsonl  loss.csv  params.txt
        snapshots.csv  density_x.csv  density_t.csv
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import metrics, sampling, training
from .config import ConfigError, ExperimentConfig

log = logging.getLogger("fboal")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def _job_dir(out: Path, sampler: str, label: str, seed: int) -> Path:
    return out / sampler / label / f"seed{seed}"


def run_job(exp: ExperimentConfig, spec_index: int, sampler: str, seed: int, out: str,
            resume: bool = False) -> dict:
    """One training run with its artifacts. Returns the summary plus ``status`` and ``wall_seconds``."""
    spec, label = exp.problem_specs()[spec_index]
    d = _job_dir(Path(out), sampler, label, seed)
    if resume and (d / "summary.json").exists():
        summary = json.loads((d / "summary.json").read_text())
        timing = json.loads((d / "timing.json").read_text()) if (d / "timing.json").exists() else {}
        return {**summary, "label": label, "status": EXIT_OK,
                "wall_seconds": timing.get("wall_seconds", 0.0)}
    d.mkdir(parents=True, exist_ok=True)
    for stale in ("snapshots.csv", "summary.json"):
        (d / stale).unlink(missing_ok=True)
    tcfg = exp.training_config(sampler, seed)

    written = []

    def snapshot(kind, iteration, C):
        sampling.write_snapshot(d / "snapshots.csv", C, iteration, append=True)
        written.append(iteration)

    try:
        params, tlog, C = training.train(spec, tcfg, on_event=snapshot)
    except training.DivergenceError as exc:
        log.error("%s %s seed %d diverged: %s", sampler, label, seed, exc)
        if exc.log is not None:
            training.write_artifacts(d, exc.params, exc.log, None)
        return {"label": label, "sampler": sampler, "seed": seed, "status": EXIT_DIVERGED}
    if written[-1] != tlog.iterations:
        sampling.write_snapshot(d / "snapshots.csv", C, tlog.iterations, append=True)
    val = training.validation_errors(params, spec, tcfg.param_values or None)
    summary = training.summary_record(tlog, tcfg, val, C)
    training.write_artifacts(d, params, tlog, summary)
    for axis, rng in (("x", spec.x_range), ("t", spec.t_range)):
        edges, dens = metrics.point_density(C, axis, 20, rng)
        metrics.write_histogram_csv(d / f"density_{axis}.csv", edges, dens)
    return {**summary, "label": label, "status": EXIT_OK, "wall_seconds": tlog.wall_seconds}


def _star(args):
    return run_job(*args)


def run_experiment(exp: ExperimentConfig, out: str | Path, resume: bool = False) -> tuple[int, list[dict]]:
    """Run every (sampler, problem, seed) job; write ``config.ini`` and ``summary.csv``."""
    exp.validate()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfgmod.to_ini(exp))
    scaled = cfgmod.apply_scale(exp, exp.scale)
    jobs = [(scaled, i, s, seed, str(out), resume)
            for s in exp.samplers for i in range(len(scaled.problem_specs())) for seed in exp.seeds]
    if exp.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=exp.jobs) as pool:
            results = list(pool.map(_star, jobs))
    else:
        results = [_star(j) for j in jobs]
    _write_summary_csv(out / "summary.csv", results)
    status = EXIT_DIVERGED if any(r["status"] == EXIT_DIVERGED for r in results) else EXIT_OK
    return status, results


def _write_summary_csv(path: Path, results: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sampler", "problem", "seed", "value", "validation_error", "iterations",
                    "resamples", "stop_reason"])
        for r in results:
            if r["status"] != EXIT_OK:
                w.writerow([r["sampler"], r["label"], r["seed"], "", "", "", "", "diverged"])
                continue
            for value, err in r["validation_error"].items():
                w.writerow([r["sampler"], r["label"], r["seed"], value, repr(err), r["iterations"],
                            r["resamples"], r["stop_reason"]])


def _aggregate(results: list[dict]) -> list[dict]:
    """Per (sampler, problem, value): geometric mean and std of errors over seeds."""
    groups: dict = {}
    for r in results:
        if r["status"] != EXIT_OK:
            continue
        for value, err in r["validation_error"].items():
            groups.setdefault((r["sampler"], r["label"], value), []).append((err, r))
    rows = []
    for (sampler, label, value), items in groups.items():
        g, sd = metrics.aggregate_runs([e for e, _ in items])
        rows.append({
            "sampler": sampler, "problem": label, "value": value, "geo_mean_error": g, "std_error": sd,
            "iterations": float(np.mean([r["iterations"] for _, r in items])),
            "resamples": float(np.mean([r["resamples"] for _, r in items])),
            "wall_seconds": float(np.mean([r["wall_seconds"] for _, r in items])),
            "seeds": len(items),
        })
    return rows


def _write_rows(path: Path, rows: list[dict], lead: list[str] = ()) -> None:
    cols = list(lead) + [k for k in (rows[0] if rows else {}) if k not in lead]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def compare_samplers(exp: ExperimentConfig, out, resume=False):
    if len(exp.samplers) < 2:
        raise ConfigError("compare needs at least two samplers")
    status, results = run_experiment(exp, out, resume)
    rows = _aggregate(results)
    _write_rows(Path(out) / "comparison.csv", rows)
    return status, rows


def parse_sweep_values(axis: str, values: list[str], exp: ExperimentConfig) -> list[int]:
    """Integers, or for ``m`` also percentages of the total point budget (``0.5%``)."""
    total = exp.budget * (len(exp.values) if exp.parameterized else 1)
    out = []
    for v in values:
        v = v.strip()
        if v.endswith("%"):
            if axis != "m":
                raise ConfigError("percent values only make sense for m")
            out.append(max(1, int(round(float(v[:-1]) / 100.0 * total))))
        else:
            out.append(int(float(v)))
    return out


def sweep(exp: ExperimentConfig, axis: str, values: list[str], out, resume=False):
    """One experiment per value of ``m``, ``k`` or ``d``; a consolidated ``sweep.csv``."""
    if axis not in ("m", "k", "d"):
        raise ConfigError("sweep axis must be m, k or d")
    parsed = parse_sweep_values(axis, values, exp)
    if not parsed:
        return EXIT_OK, []
    out = Path(out)
    status, rows = EXIT_OK, []
    for raw, v in zip(values, parsed):
        field = {"m": "swap_count", "k": "resample_period", "d": "subdomain_count"}[axis]
        sub = replace(exp, **{field: v})
        if axis == "d":
            sub = replace(sub, cell_size=0.0)
        st, results = run_experiment(sub, out / f"{axis}={raw.strip()}", resume)
        status = max(status, st)
        for r in _aggregate(results):
            rows.append({"axis": axis, "setting": raw.strip(), "value_used": v, **r})
    _write_rows(out / "sweep.csv", rows)
    return status, rows


def export_density(snapshots: str, axis: str, bins: int, out: str, iteration=None,
                   value_range=None, strip=None) -> None:
    snaps = sampling.read_snapshots(snapshots)
    it = max(snaps) if iteration is None else iteration
    if it not in snaps:
        raise ConfigError(f"no snapshot at iteration {it}")
    edges, dens = metrics.point_density(snaps[it], axis, bins, value_range, strip)
    metrics.write_histogram_csv(out, edges, dens)


# --- argument handling -----------------------------------------------------------

def _pair(text):
    a, b = (float(s) for s in text.split(","))
    return a, b


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fboal", description="Adaptive-collocation PINN experiments")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--preset", help=f"named preset: {', '.join(sorted(cfgmod.PRESETS))}")
        sp.add_argument("--scale", type=float, help="multiply iteration counts by this factor in (0, 1]")
        sp.add_argument("--jobs", type=int, help="parallel runs")
        sp.add_argument("--seed-list", help="comma-separated seeds")
        sp.add_argument("--values", help="comma-separated parameter values (overrides the config)")
        sp.add_argument("--samplers", help="comma-separated samplers (overrides the config)")
        sp.add_argument("--out", default="runs", help="output directory")
        sp.add_argument("--resume", action="store_true", help="skip runs that already have a summary")

    common(sub.add_parser("run", help="train every sampler/problem/seed in the config"))
    common(sub.add_parser("compare", help="run and aggregate at least two samplers"))
    sw = sub.add_parser("sweep", help="vary m, k or d")
    common(sw)
    sw.add_argument("--axis", required=True, choices=("m", "k", "d"))
    sw.add_argument("--sweep-values", default="", help="e.g. 1000,2000,5000 or 0.5%%,1%%,2%%")
    sc = sub.add_parser("show-config", help="print the canonical config")
    sc.add_argument("--config")
    sc.add_argument("--preset")
    ed = sub.add_parser("export-density", help="histogram of a collocation snapshot")
    ed.add_argument("--snapshots", required=True)
    ed.add_argument("--axis", default="x", choices=("x", "t"))
    ed.add_argument("--bins", type=int, default=20)
    ed.add_argument("--iteration", type=int)
    ed.add_argument("--range", type=_pair, dest="value_range")
    ed.add_argument("--strip", type=_pair)
    ed.add_argument("--out", required=True)
    return p


def _experiment(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("give --config or --preset, not both")
    if args.config:
        exp = cfgmod.load(args.config)
    elif args.preset:
        exp = cfgmod.preset(args.preset)
    else:
        raise ConfigError("need --config or --preset")
    over = {}
    try:
        if getattr(args, "scale", None) is not None:
            over["scale"] = float(args.scale)
        if getattr(args, "jobs", None) is not None:
            over["jobs"] = int(args.jobs)
        if getattr(args, "seed_list", None):
            over["seeds"] = tuple(int(s) for s in args.seed_list.split(","))
        if getattr(args, "values", None):
            over["values"] = tuple(float(s) for s in args.values.split(","))
        if getattr(args, "samplers", None):
            over["samplers"] = tuple(s.strip() for s in args.samplers.split(","))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return replace(exp, **over).validate()


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "export-density":
            export_density(args.snapshots, args.axis, args.bins, args.out, args.iteration,
                           args.value_range, args.strip)
            return EXIT_OK
        exp = _experiment(args)
        if args.verb == "show-config":
            sys.stdout.write(cfgmod.to_ini(exp))
            return EXIT_OK
        if args.verb == "run":
            status, _ = run_experiment(exp, args.out, args.resume)
        elif args.verb == "compare":
            status, _ = compare_samplers(exp, args.out, args.resume)
        else:
            values = [v for v in args.sweep_values.split(",") if v.strip()]
            status, _ = sweep(exp, args.axis, values, args.out, args.resume)
        return status
    except ConfigError as exc:
        print(f"fboal: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
