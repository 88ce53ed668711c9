"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL`` line (also repeated in the
terminal summary). The training-based criteria (6, 7, 8, 10) run scaled
schedules and take from minutes to over an hour on one core; deselect them
with ``-m "not slow"``.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from fboal import cli, config, metrics, network, oracle, pde, sampling
from fboal.config import ExperimentConfig

import brute_fboal
import fd_burgers


# --- 1. autodiff against finite differences -------------------------------------------

def test_criterion_1_autodiff_gradients(criterion):
    spec = pde.burgers_problem(0.01)
    rng = np.random.default_rng(2024)
    worst_dir = worst_coord = worst_uxx = 0.0
    start = time.perf_counter()
    for s in range(100):
        p = network.init_network((2, 50, 50, 50, 50, 1), s)
        # nonzero biases so every term of the chain rule is exercised
        for b in p.biases:
            b[:] = rng.normal(0, 0.1, b.shape)
        C = sampling.init_collocation(spec, 32, scheme="uniform_random", seed=s)
        _, g = pde.loss_and_grad(p, spec, C)
        base = p.flat.copy()

        def loss_at(v):
            p.flat[:] = v
            return pde.pde_loss(p, spec, C)

        for _ in range(2):
            d = rng.normal(size=base.size)
            d /= np.linalg.norm(d)
            fd = (loss_at(base + 1e-5 * d) - loss_at(base - 1e-5 * d)) / 2e-5
            worst_dir = max(worst_dir, abs(fd - g @ d) / abs(g @ d))
        idx = rng.choice(base.size, 10, replace=False)
        fds = []
        for i in idx:
            e = np.zeros_like(base)
            e[i] = 1e-6
            fds.append((loss_at(base + e) - loss_at(base - e)) / 2e-6)
        p.flat[:] = base
        fds = np.array(fds)
        worst_coord = max(worst_coord, np.linalg.norm(fds - g[idx]) / np.linalg.norm(fds))

        x, t, h = rng.uniform(-0.9, 0.9, 8), rng.uniform(0.05, 0.95, 8), 1e-3
        uxx = pde._Batch(p, spec, x, t, None, pde._DIRECTIONS["burgers"], keep_cache=False).fields["u_xx"]
        u = lambda xx: pde.predict(p, spec, xx, t)  # noqa: E731
        st = (-u(x + 2 * h) + 16 * u(x + h) - 30 * u(x) + 16 * u(x - h) - u(x - 2 * h)) / (12 * h * h)
        worst_uxx = max(worst_uxx, np.max(np.abs(st - uxx) / np.maximum(np.abs(uxx), 1.0)))
    secs = time.perf_counter() - start
    ok = max(worst_dir, worst_coord) < 1e-5 and worst_uxx < 1e-4 and secs < 60
    criterion(1, ok, f"grad rel err {max(worst_dir, worst_coord):.2e} (<1e-5), "
                     f"u_xx vs stencil {worst_uxx:.2e} (<1e-4), {secs:.1f}s (<60s)")


# --- 2. oracle cross-validation --------------------------------------------------------

def test_criterion_2_oracles(criterion):
    start = time.perf_counter()
    errs = {}
    for nu in (0.0025, 0.0116):
        # 50 nodes on each axis, refined 80x in x and 40x in t for the solver
        x, ts, U = fd_burgers.solve(nu, 49 * 80, 49 * 40, save_every=40)
        X, T = np.meshgrid(x[::80], ts, indexing="ij")
        errs[nu] = float(np.max(np.abs(oracle.burgers_reference(X, T, nu) - U[:, ::80].T)))
    c2, h = 3.0, 1e-3
    X, T = np.meshgrid(np.linspace(-3.9, 3.9, 50), np.linspace(0.1, 5.4, 50), indexing="ij")
    u = lambda a, b: oracle.wave_exact(a, b, c2)  # noqa: E731
    five = lambda f0, fp, fm, fpp, fmm: (-fpp + 16 * fp - 30 * f0 + 16 * fm - fmm) / (12 * h * h)  # noqa: E731
    c = u(X, T)
    uxx = five(c, u(X + h, T), u(X - h, T), u(X + 2 * h, T), u(X - 2 * h, T))
    utt = five(c, u(X, T + h), u(X, T - h), u(X, T + 2 * h), u(X, T - 2 * h))
    wave_res = float(np.max(np.abs(utt - c2 * uxx)))
    secs = time.perf_counter() - start
    ok = max(errs.values()) < 1e-4 and wave_res < 1e-5 and secs < 300
    criterion(2, ok, "Cole-Hopf vs Crank-Nicolson " +
              ", ".join(f"nu={nu}: {e:.1e}" for nu, e in errs.items()) +
              f" (<1e-4); wave residual {wave_res:.1e} (<1e-5); {secs:.0f}s")


# --- 3. FBOAL selection against brute force --------------------------------------------

def test_criterion_3_fboal_brute_force(criterion):
    start = time.perf_counter()
    mismatches = empty_cell = m_over = 0
    for trial in range(200):
        rng = np.random.default_rng(10_000 + trial)
        nx, nt = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        grid = sampling.SubdomainGrid(np.linspace(-1, 1, nx + 1), np.linspace(0, 1, nt + 1))
        n_c, n_p = int(rng.integers(1, 40)), int(rng.integers(1, 120))
        # a third of the trials pile every point into a corner, leaving cells empty
        hi = -0.6 if trial % 3 == 0 else 1.0
        C = sampling.CollocationSet(rng.uniform(-1, hi, n_c), rng.uniform(0, 1, n_c), None, np.zeros(n_c),
                                    rng.permutation(5 * n_c)[:n_c], n_c)
        P = sampling.CollocationSet(rng.uniform(-1, hi, n_p), rng.uniform(0, 1, n_p), None, np.zeros(n_p),
                                    np.arange(n_p), n_p)
        r_c = rng.integers(-3, 4, n_c).astype(float)
        r_p = rng.integers(-3, 4, n_p).astype(float)
        if trial % 2:
            r_c += rng.normal(0, 1e-3, n_c)
            r_p += rng.normal(0, 1e-3, n_p)
        m = int(rng.integers(0, grid.d + 1))
        occupied = min(np.unique(grid.cell_of(C.x, C.t)).size, np.unique(grid.cell_of(P.x, P.t)).size)
        empty_cell += occupied < grid.d
        m_over += m > occupied
        plan = sampling.fboal_step(C, P, grid, m=m, r_C=r_c, r_Cp=r_p)
        want_add, want_rm = brute_fboal.select(list(zip(C.ids, C.x, C.t, r_c)), list(zip(P.ids, P.x, P.t, r_p)),
                                               grid.x_edges, grid.t_edges, m)
        same = (set(P.ids[plan.added].tolist()) == want_add and set(C.ids[plan.removed].tolist()) == want_rm
                and plan.added.size == plan.removed.size == len(want_add))
        mismatches += not same
    secs = time.perf_counter() - start
    ok = mismatches == 0 and empty_cell > 0 and m_over > 0 and secs < 60
    criterion(3, ok, f"{200 - mismatches}/200 trials match brute force "
                     f"({empty_cell} with empty cells, {m_over} with m > occupied cells), {secs:.1f}s")


# --- 4. budget conservation -------------------------------------------------------------

def _ripple(x, t, p=None):
    return np.sin(3 * x) * np.cos(2 * t) + 0.1 * x


def test_criterion_4_budget_conservation(criterion):
    spec = pde.burgers_problem(0.01)
    grid = sampling.build_grid(spec, cell_size=0.5)
    bad = []
    for seq in range(4):
        rng = np.random.default_rng(seq)
        C = sampling.init_collocation(spec, 100)
        for e in range(50):
            if rng.random() < 0.5:
                C, _ = sampling.fboal_resample(C, spec, grid, _ripple, int(rng.integers(0, 9)), rng)
            else:
                C = sampling.rad_resample(C, spec, _ripple, seed=rng)
            if len(C) != 100 or np.unique(C.ids).size != 100:
                bad.append((seq, e, len(C)))
    C = sampling.init_collocation(spec, 100)
    rng = np.random.default_rng(99)
    for _ in range(50):
        C = sampling.rard_add(C, spec, _ripple, m_add=5, seed=rng)
    ok = not bad and len(C) == 100 + 50 * 5
    criterion(4, ok, f"4 random 50-event FBOAL/RAD sequences keep |C|=100 ({len(bad)} violations); "
                     f"RAR-D 50 events x 5 gives {len(C)} (want 350)")


# --- 5. RAD sampling law ------------------------------------------------------------------

def test_criterion_5_sampling_law(criterion):
    spec = pde.burgers_problem(0.01)
    xs = np.linspace(-0.9, 0.9, 10)
    pool = sampling.CollocationSet(xs, np.full(10, 0.5), None, np.zeros(10), np.arange(10), 10)
    C = sampling.init_collocation(spec, 1)
    eps_of = lambda x, t, p: 0.2 + (x + 0.9)  # noqa: E731
    eps = eps_of(xs, None, None)
    pvals = {}
    for kappa, c in ((0, 1), (1, 1), (2, 0)):
        w = eps**kappa / np.mean(eps**kappa) + c
        rng = np.random.default_rng(kappa * 10 + c)
        hits = np.zeros(10, int)
        for _ in range(2000):
            new = sampling.rard_add(C, spec, eps_of, kappa=kappa, c=c, m_add=1, seed=rng, pool=pool)
            hits[np.flatnonzero(xs == new.x[-1])[0]] += 1
        pvals[(kappa, c)] = stats.chisquare(hits, 2000 * w / w.sum()).pvalue
    ok = min(pvals.values()) > 0.01
    criterion(5, ok, "chi-square p over 2000 draws " +
              ", ".join(f"(k={k},c={c}): {p:.3f}" for (k, c), p in pvals.items()) + " (>0.01)")


# --- training-based criteria --------------------------------------------------------------

def _summaries(out: Path, sampler: str):
    return [json.loads(p.read_text()) for p in sorted((out / sampler).glob("*/seed*/summary.json"))]


@pytest.mark.slow
def test_criterion_6_static_smooth_burgers(criterion, tmp_path):
    exp = ExperimentConfig(values=(0.0116,), samplers=("static",), seeds=(0,), scale=0.1)
    status, results = cli.run_experiment(exp, tmp_path)
    s = _summaries(tmp_path, "static")[0]
    err = s["validation_error"]["0.0116"]
    ok = status == 0 and err < 0.05
    criterion(6, ok, f"static nu=0.0116 scale 0.1: validation L2 {err:.4f} (<0.05) after "
                     f"{s['iterations']} iterations ({s['stop_reason']}), "
                     f"{results[0]['wall_seconds']:.0f}s")


@pytest.mark.slow
def test_criterion_7_fboal_beats_static(criterion, tmp_path):
    exp = ExperimentConfig(values=(0.0025,), samplers=("static", "fboal"), seeds=(0, 1, 2), scale=0.1)
    status, _ = cli.run_experiment(exp, tmp_path)
    geo, iters = {}, {}
    for name in ("static", "fboal"):
        runs = _summaries(tmp_path, name)
        geo[name], _ = metrics.aggregate_runs([r["validation_error"]["0.0025"] for r in runs])
        iters[name] = [r["iterations"] for r in runs]
    xs = []
    for snap in sorted((tmp_path / "fboal").glob("*/seed*/snapshots.csv")):
        snaps = sampling.read_snapshots(snap)
        xs.append(snaps[max(snaps)]["x"])
    edges, dens = metrics.point_density({"x": np.concatenate(xs)}, "x", 20, (-1.0, 1.0))
    centres = 0.5 * (edges[:-1] + edges[1:])
    peak = float(centres[np.argmax(dens)])
    ok = status == 0 and geo["fboal"] < geo["static"] and abs(peak) <= 0.1
    criterion(7, ok, f"nu=0.0025 scale 0.1, 3 seeds: geo-mean fboal {geo['fboal']:.4f} vs static "
                     f"{geo['static']:.4f} (fboal must be lower); density peak at x={peak:+.2f} (|x|<=0.1); "
                     f"iterations fboal {iters['fboal']} static {iters['static']}")


@pytest.mark.slow
def test_criterion_8_wave(criterion, tmp_path):
    exp = config.preset("wave-fixed")
    exp = ExperimentConfig(**{**exp.__dict__, "values": (3.0,), "samplers": ("fboal",), "seeds": (0,),
                              "scale": 0.2})
    status, results = cli.run_experiment(exp, tmp_path)
    s = _summaries(tmp_path, "fboal")[0]
    err = s["validation_error"]["3.0"]
    ok = status == 0 and err < 0.05
    criterion(8, ok, f"wave c2=3 fboal scale 0.2: L2 on 256x100 {err:.4f} (<0.05) after "
                     f"{s['iterations']} iterations ({s['stop_reason']}), {results[0]['wall_seconds']:.0f}s")


def test_criterion_9_determinism(criterion, tmp_path):
    exp = ExperimentConfig(values=(0.01,), hidden=(20, 20), lr_stages=((1e-3, 600), (1e-4, 200)),
                           budget=256, samplers=("fboal", "rad", "rard"), resample_period=200,
                           swap_count=5, seeds=(3,))
    for name in ("a", "b"):
        cli.run_experiment(exp, tmp_path / name)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").glob("*/*/*/summary.json"))
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files]
    ok = len(files) == 3 and all(same)
    criterion(9, ok, f"{sum(same)}/{len(files)} summary.json files byte-identical across two runs")


@pytest.mark.slow
def test_criterion_10_parameterized_counts(criterion, tmp_path):
    values = tuple(float(v) for v in np.linspace(0.0025, 0.0124, 8))
    base = config.preset("burgers-param")
    # 0.5% of the 2048 points is about 10 swaps; the threshold is 0.02 per value
    exp = ExperimentConfig(**{**base.__dict__, "values": values, "budget": 256, "swap_count": 10,
                              "threshold": 0.02 * len(values), "samplers": ("fboal",),
                              "seeds": (0, 1, 2), "scale": 0.05})
    status, _ = cli.run_experiment(exp, tmp_path)
    total = 256 * len(values)
    sums_ok, trend, events = True, [], []
    for snap in sorted((tmp_path / "fboal").glob("param/seed*/snapshots.csv")):
        snaps = sampling.read_snapshots(snap)
        for it in sorted(snaps):
            counts = {v: int(np.count_nonzero(snaps[it]["param"] == v)) for v in values}
            sums_ok &= sum(counts.values()) == total == snaps[it]["param"].size
        final = snaps[max(snaps)]["param"]
        lo, hi = (int(np.count_nonzero(final == v)) for v in (values[0], values[-1]))
        trend.append((lo, hi))
        events.append(len(snaps) - 2)
    wins = sum(lo >= hi for lo, hi in trend)
    ok = status == 0 and len(trend) == 3 and sums_ok and wins >= 2
    criterion(10, ok, f"per-value counts sum to {total} after every event: {sums_ok}; "
                      f"final (smallest nu, largest nu) counts {trend}, {wins}/3 seeds favour the smallest; "
                      f"resampling events per seed {events}")
