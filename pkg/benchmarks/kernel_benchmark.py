"""Benchmark the RK4 stepping kernels (compiled extension vs NumPy fallback).

The workload is the bundled ten-node grid under the averaging law: a 40-state
affine system stepped at dt = 1 ms, which is exactly the inner loop of every
simulation. Run from the repository root:

    python3 benchmarks/kernel_benchmark.py [--steps N]
"""
import argparse
import time

import numpy as np

from gridfreq.controllers import ControlContext
from gridfreq.kernels import available_backends
from gridfreq.model import toy_grid
from gridfreq.simulator import assemble_affine, initial_flows


def build_workload():
    scn = toy_grid()
    grid = scn.grid
    p = grid.fixed_power().copy()
    p[2] -= 5.0
    A, b = assemble_affine(grid, scn.comm, ControlContext(scheme="CONSENSUS"),
                           p, {}, 0.0)
    x0 = np.zeros(A.shape[0])
    x0[grid.n_nodes:grid.n_nodes + grid.n_lines] = initial_flows(
        grid, grid.fixed_power())
    return np.ascontiguousarray(A), b, x0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=200_000,
                    help="RK4 steps per timed run (default: one 200 s horizon)")
    args = ap.parse_args()

    A, b, x0 = build_workload()
    impls = available_backends()
    print(f"state dimension {A.shape[0]}, {args.steps} steps, dt=1e-3")
    results = {}
    for name, fn in sorted(impls.items()):
        x = x0.copy()
        out = np.empty((0, len(x0)))
        t0 = time.perf_counter()
        fn(A, b, x, 1e-3, args.steps, 0, 1, out)
        elapsed = time.perf_counter() - t0
        results[name] = (elapsed, x)
        print(f"  {name:<8} {elapsed:8.3f} s   {args.steps / elapsed / 1e6:6.2f} Msteps/s")

    if len(results) == 2:
        gap = np.abs(results["cython"][1] - results["python"][1]).max()
        speedup = results["python"][0] / results["cython"][0]
        print(f"  speedup {speedup:.1f}x, final-state agreement {gap:.2e}")
        assert gap < 1e-12, "backends disagree"
    else:
        print("  (compiled extension not built; only the fallback was timed)")


if __name__ == "__main__":
    main()
