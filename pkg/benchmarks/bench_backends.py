#!/usr/bin/env python3
"""Compare the numba and pure-numpy sweep kernels.

Times the Lax-Friedrichs and exact-upwind updates on the shipped
double-integrator problem at a configurable resolution, checks that the
two backends agree, and prints a speedup table.

    python benchmarks/bench_backends.py --nodes 401 --steps 200
"""

import argparse
import time

import numpy as np

from hjras import backend, builtin_system
from hjras.grids import Grid
from hjras.shapes import ball, rasterize
from hjras.solver import SolverWorkspace


def time_steps(ws, V0, r, dt, steps, sweep):
    V = V0.copy()
    t0 = time.perf_counter()
    for _ in range(steps):
        V = np.minimum(sweep(V, dt, 0.0), r)
    elapsed = time.perf_counter() - t0
    return elapsed / steps, V


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--nodes", type=int, default=401, help="nodes per dimension")
    parser.add_argument("--steps", type=int, default=200)
    args = parser.parse_args()

    sysm = builtin_system("double_integrator", d_max=0.2)
    grid = Grid([-2.0, -2.0], [2.0, 2.0], [args.nodes, args.nodes], [False, False])
    ws = SolverWorkspace(sysm, grid)
    r = rasterize(ball([0.0, 0.0], 0.5), grid).values
    dt = ws.cfl_dt(0.5)
    print(f"grid {args.nodes}x{args.nodes} ({grid.num_nodes} nodes), dt={dt:.2e}, {args.steps} steps/case")

    results = {}
    for name in ("numpy", "numba") if backend.NUMBA_AVAILABLE else ("numpy",):
        backend.set_backend(name)
        ws.sweep(r, dt, 0.0)  # warm up (JIT compile on first numba call)
        ws.godunov_sweep(r, dt, 0.0)
        for flux, sweep in (("lax_friedrichs", ws.sweep), ("exact_upwind", ws.godunov_sweep)):
            per_step, V = time_steps(ws, r, r, dt, args.steps, sweep)
            results[(name, flux)] = (per_step, V)
            print(f"  {name:6s} {flux:15s} {per_step * 1e3:8.3f} ms/step")

    for flux in ("lax_friedrichs", "exact_upwind"):
        if ("numba", flux) in results:
            t_np, v_np = results[("numpy", flux)]
            t_nb, v_nb = results[("numba", flux)]
            err = float(np.abs(v_np - v_nb).max())
            print(f"{flux}: numba speedup {t_np / t_nb:.2f}x, backend max |diff| = {err:.2e}")
            if err > 1e-10:
                raise SystemExit(f"backend disagreement for {flux}: {err}")


if __name__ == "__main__":
    main()
