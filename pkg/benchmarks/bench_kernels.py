"""Compare the compiled and numpy kernels on one PINN training step.

Usage: python benchmarks/bench_kernels.py [--points 1024] [--repeat 7]

A step is one forward pass carrying the Burgers channels (value, u_x, u_xx,
u_t) plus the full adjoint sweep back to the parameters. Reports the best of
``--repeat`` timing rounds, which is the least noisy figure on a shared box.
"""

from __future__ import annotations

import argparse
import time

import numpy as np
from threadpoolctl import threadpool_limits

from fboal import kernels
from fboal.network import init_network


def time_step(kernel, params, X, seeds, orders, rounds, inner):
    grad = np.zeros_like(params.flat)
    ws = {}
    best = float("inf")
    for _ in range(rounds):
        t0 = time.perf_counter()
        for _ in range(inner):
            out, cache = kernel.forward(params.weights, params.biases, X, seeds, orders, True, ws)
            kernel.backward(params.weights, cache, out, grad, ws)
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=1024)
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--inner", type=int, default=20)
    ap.add_argument("--wave", action="store_true", help="also carry u_tt (five channels)")
    args = ap.parse_args(argv)

    params = init_network([2, 50, 50, 50, 50, 1], seed=0)
    rng = np.random.default_rng(0)
    X = rng.uniform(-1.0, 1.0, size=(args.points, 2))
    seeds = np.eye(2)
    orders = (2, 2) if args.wave else (2, 1)

    rows = []
    with threadpool_limits(1):
        for kernel in (kernels.python_kernel, kernels.compiled_kernel):
            if kernel is None:
                print("compiled kernel not built; run `pip install -e . --no-build-isolation`")
                continue
            dt = time_step(kernel, params, X, seeds, orders, args.repeat, args.inner)
            rows.append((kernel.IMPLEMENTATION, dt))
    print(f"{'kernel':<10}{'ms/step':>10}{'speedup':>10}")
    base = rows[0][1]
    for name, dt in rows:
        print(f"{name:<10}{dt * 1e3:>10.2f}{base / dt:>10.2f}")


if __name__ == "__main__":
    main()
