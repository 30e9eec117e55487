"""Compare the compiled tridiagonal kernels with the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--n 2000] [--k 5] [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from peakspec import _kernels_py, kernels
from peakspec.grid1d import Grid1D, ModelPotentialSpec, assemble_model, default_grid


def model_bands(n_target: int):
    """Bands of the 1D model pencil, thinned to at most ``n_target`` nodes."""
    spec = ModelPotentialSpec(0.0, 1.0)
    grid = default_grid(spec)
    nodes = grid.nodes
    if nodes.size > n_target:
        nodes = np.unique(nodes[np.linspace(0, nodes.size - 1, n_target).astype(int)])
    pen = assemble_model(spec, Grid1D(nodes))
    K, M = pen.stiffness.tocsr(), pen.mass.tocsr()
    bands = (K.diagonal().copy(), K.diagonal(1).copy(), M.diagonal().copy(), M.diagonal(1).copy())
    return tuple(np.ascontiguousarray(b) for b in bands)


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000, help="cap on the unknowns of the model pencil (the default grid has about 1300)")
    ap.add_argument("--k", type=int, default=5, help="eigenvalues to bisect for")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    kd, ko, md, mo = model_bands(args.n)
    lo, hi = -1.0, 1.0
    rng = np.random.default_rng(0)
    rhs = rng.standard_normal(kd.size)
    diag = np.abs(kd) + 2 * np.abs(np.r_[ko, 0]) + 1.0

    cases = {
        "sturm_count": lambda m: m.sturm_count(kd, ko, md, mo, -0.01),
        "bisect_eigenvalues": lambda m: m.bisect_eigenvalues(kd, ko, md, mo, lo, hi, 0, args.k - 1, 1e-12),
        "tridiag_solve": lambda m: m.tridiag_solve(diag, ko, rhs),
    }
    print(f"backend in use: {kernels.BACKEND}; n = {kd.size}")
    if kernels.BACKEND != "compiled":
        print("compiled extension unavailable; only the fallback is timed")
    print(f"{'kernel':<20} {'compiled [ms]':>14} {'python [ms]':>12} {'speedup':>8}")
    for name, call in cases.items():
        tp = best_of(lambda: call(_kernels_py), args.repeat)
        if kernels.BACKEND == "compiled":
            tc = best_of(lambda: call(kernels), args.repeat)
            print(f"{name:<20} {1e3 * tc:14.3f} {1e3 * tp:12.3f} {tp / tc:8.1f}")
        else:
            print(f"{name:<20} {'-':>14} {1e3 * tp:12.3f} {'-':>8}")


if __name__ == "__main__":
    main()
