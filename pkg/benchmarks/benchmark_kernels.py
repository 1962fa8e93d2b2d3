#!/usr/bin/env python3
"""Benchmark the hot kernels: numba builds against the pure-numpy fallbacks.

Times the three operations on problem sizes matching the production runs
(solver grids of 4096 nodes, kernel levels with a few hundred sections).

Usage:
    python benchmarks/benchmark_kernels.py [--nodes N] [--sections J] [--repeat R]

Run with RADIALKE_NO_NUMBA=1 to confirm the fallback wiring end to end; this
script calls both paths explicitly either way.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from radialke import kernels
from radialke._accel import USING_NUMBA


def timeit(fn, args, repeat):
    fn(*args)  # warmup / JIT compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=4096)
    ap.add_argument("--sections", type=int, default=401)
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n, j = args.nodes, args.sections
    t = np.linspace(-80.0, 80.0, n)
    logw = np.full(n, np.log(t[1] - t[0]))
    slopes = np.arange(j, dtype=np.float64)
    offsets = -np.cumsum(rng.uniform(0.5, 2.0, j))
    base = -4.0 * np.logaddexp(0.0, t)

    dl = np.full(n, 1.0)
    du = np.full(n, 1.0)
    diag = np.full(n, -4.0)
    rhs = rng.normal(size=n)
    dl[0] = du[-1] = 0.0

    cases = [
        ("tridiag_solve", (dl, diag, du, rhs),
         kernels.tridiag_solve_numpy, kernels.tridiag_solve_numba),
        ("affine_lse_profile", (t, slopes, offsets),
         kernels.affine_lse_profile_numpy, kernels.affine_lse_profile_numba),
        ("affine_lse_quadrature", (t, logw, slopes, offsets, base),
         kernels.affine_lse_quadrature_numpy, kernels.affine_lse_quadrature_numba),
    ]

    print(f"nodes={n} sections={j} repeat={args.repeat} "
          f"(selected path: {'numba' if USING_NUMBA else 'numpy'})")
    print(f"{'kernel':<24}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, call_args, np_fn, nb_fn in cases:
        t_np = timeit(np_fn, call_args, args.repeat) * 1e3
        if nb_fn is None:
            print(f"{name:<24}{t_np:>12.3f}{'n/a':>12}{'n/a':>10}")
            continue
        t_nb = timeit(nb_fn, call_args, args.repeat) * 1e3
        np.testing.assert_allclose(np_fn(*call_args), nb_fn(*call_args),
                                   rtol=1e-12)
        print(f"{name:<24}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>10.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
