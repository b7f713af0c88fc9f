#!/usr/bin/env python3
"""Benchmark the HJB sweep kernels: numba vs numpy backend.

Times the two hot kernels (multilinear interpolation and the semi-Lagrangian
min over velocity feet) on random data, then full ``solve_hjb`` calls on
registry problems. Outputs of both backends are compared bitwise.

Usage:
    python benchmarks/bench_hjb_kernels.py [--repeat N] [--nodes N] [--feet K] [--problems a,b]
"""

import argparse
import time

import numpy as np

from mayersens import benchmarks, kernels
from mayersens.hjb import solve_hjb

BACKENDS = ("numpy", "numba")


def best_of(fn, repeat):
    """Fastest wall time of ``repeat`` calls (first call excluded as warm-up)."""
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_data(nodes, feet, seed=0):
    rng = np.random.default_rng(seed)
    shape = (nodes, nodes)
    vals = rng.normal(size=shape)
    mask = (rng.random(shape) < 0.05).astype(float)
    spacing = [1.0 / (nodes - 1)] * 2
    F = rng.uniform(-0.05, 1.05, size=(nodes * nodes, feet, 2))
    return vals, mask, [0.0, 0.0], spacing, F


def bench_kernels(nodes, feet, repeat):
    vals, mask, origin, spacing, F = kernel_data(nodes, feet)
    pts = F[:, 0]
    rows, outs = [], {}
    for b in BACKENDS:
        kernels.set_backend(b)
        outs[b] = (kernels.interp_multilinear(vals, origin, spacing, pts),
                   kernels.sl_min(vals, mask, origin, spacing, F))
        ti = best_of(lambda: kernels.interp_multilinear(vals, origin, spacing, pts), repeat)
        ts = best_of(lambda: kernels.sl_min(vals, mask, origin, spacing, F), repeat)
        rows.append((b, ti, ts))
    same = all(np.array_equal(x, y)
               for a, c in zip(outs["numpy"], outs["numba"]) for x, y in zip(a, c))
    return rows, same


def bench_solves(names, repeat):
    rows = []
    for name in names:
        b = benchmarks.instance(name)
        res = {}
        for be in BACKENDS:
            kernels.set_backend(be)
            res[be] = (best_of(lambda: solve_hjb(b.problem, b.grid), repeat),
                       solve_hjb(b.problem, b.grid).values)
        same = np.array_equal(res["numpy"][1], res["numba"][1])
        rows.append((name, res["numpy"][0], res["numba"][0], same))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--nodes", type=int, default=201, help="nodes per axis of the 2D kernel test grid")
    ap.add_argument("--feet", type=int, default=16, help="velocity feet per node")
    ap.add_argument("--problems", default="eikonal1d,two_ray,interval_fg,ball_linear")
    args = ap.parse_args(argv)

    start = kernels.get_backend()
    try:
        rows, same = bench_kernels(args.nodes, args.feet, args.repeat)
        print(f"kernels on {args.nodes}x{args.nodes} nodes, {args.feet} feet/node (best of {args.repeat})")
        print(f"{'backend':8s} {'interp [ms]':>12s} {'sl_min [ms]':>12s}")
        for b, ti, ts in rows:
            print(f"{b:8s} {1e3 * ti:12.2f} {1e3 * ts:12.2f}")
        (_, ni, ns), (_, bi, bs) = rows
        print(f"speedup  {ni / bi:11.1f}x {ns / bs:11.1f}x   outputs identical: {same}")
        print()
        print(f"solve_hjb on registry grids (best of {args.repeat})")
        print(f"{'problem':14s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s}  identical")
        for name, tn, tb, eq in bench_solves([s for s in args.problems.split(",") if s], args.repeat):
            print(f"{name:14s} {tn:10.3f} {tb:10.3f} {tn / tb:7.1f}x  {eq}")
    finally:
        kernels.set_backend(start)


if __name__ == "__main__":
    main()
