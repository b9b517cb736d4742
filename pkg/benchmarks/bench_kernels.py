#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Also times grid-indexed radius queries against a full linear scan on a
synthetic store. Run from the repository root:

    python benchmarks/bench_kernels.py --store-size 1000000 --queries 50
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from senserag import Table, kernels  # noqa: E402


def timeit(fn, repeats=7):
    best = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best.append(time.perf_counter() - start)
    return min(best)


def bench_pair(name, numpy_fn, numba_fn):
    t_np = timeit(numpy_fn)
    if numba_fn is None:
        print(f"{name:24s} numpy {t_np * 1e3:8.3f} ms   numba unavailable")
        return
    numba_fn()  # JIT warm-up outside the timed region
    t_nb = timeit(numba_fn)
    ratio = t_np / t_nb if t_nb > 0 else float("inf")
    print(f"{name:24s} numpy {t_np * 1e3:8.3f} ms   numba {t_nb * 1e3:8.3f} ms   {ratio:5.2f}x")


def bench_kernels(n: int) -> None:
    rng = np.random.default_rng(0)
    xs = rng.uniform(-1500, 1500, n)
    ys = rng.uniform(-1500, 1500, n)
    ts = rng.integers(0, 100_000, n).astype(np.int64)
    t0, t1 = np.int64(10_000), np.int64(60_000)

    print(f"\nkernel microbenchmarks (n = {n:,})")
    bench_pair(
        "radius_time_mask",
        lambda: kernels.radius_time_mask_numpy(xs, ys, ts, 0.0, 0.0, 900.0, t0, t1),
        (lambda: kernels.radius_time_mask_numba(xs, ys, ts, 0.0, 0.0, 900.0, t0, t1))
        if kernels.NUMBA_AVAILABLE else None,
    )

    pred = rng.uniform(-100, 100, (n // 100, 10, 2))
    gt = rng.uniform(-100, 100, (n // 100, 10, 2))
    bench_pair(
        "step_distances",
        lambda: kernels.step_distances_numpy(pred, gt),
        (lambda: kernels.step_distances_numba(pred, gt)) if kernels.NUMBA_AVAILABLE else None,
    )

    series = rng.uniform(-10, 10, n)
    bench_pair(
        "median3",
        lambda: kernels.median3_numpy(series),
        (lambda: kernels.median3_numba(series)) if kernels.NUMBA_AVAILABLE else None,
    )
    bench_pair(
        "minmax_unit_scale",
        lambda: kernels.minmax_unit_scale_numpy(series),
        (lambda: kernels.minmax_unit_scale_numba(series)) if kernels.NUMBA_AVAILABLE else None,
    )


def bench_store(n: int, n_queries: int) -> None:
    import synth

    print(f"\nstore radius queries (n = {n:,}, backend = {kernels.active_backend()})")
    build_start = time.perf_counter()
    store = synth.big_uniform_store(n)
    print(f"  build: {time.perf_counter() - build_start:.1f} s")

    kernels.warmup()
    store.query_radius(Table.VEHICLES, (0.0, 0.0), 30.0)  # compaction outside timing

    packed = store.index(Table.VEHICLES).packed
    xs, ys, ts = packed.xs, packed.ys, packed.ts
    rng = np.random.default_rng(1)
    grid_times, scan_times = [], []
    for _ in range(n_queries):
        cx, cy = rng.uniform(-1400, 1400, 2)
        start = time.perf_counter()
        store.query_radius(Table.VEHICLES, (float(cx), float(cy)), 30.0)
        grid_times.append(time.perf_counter() - start)

        start = time.perf_counter()
        mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= 900.0
        np.flatnonzero(mask)
        scan_times.append(time.perf_counter() - start)

    grid = statistics.median(grid_times)
    scan = statistics.median(scan_times)
    print(f"  grid median: {grid * 1e3:7.3f} ms")
    print(f"  scan median: {scan * 1e3:7.3f} ms")
    print(f"  speedup:     {scan / grid:7.1f}x")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=1_000_000, help="kernel input size")
    parser.add_argument("--store-size", type=int, default=1_000_000)
    parser.add_argument("--queries", type=int, default=50)
    parser.add_argument("--skip-store", action="store_true")
    args = parser.parse_args()

    print(f"numba available: {kernels.NUMBA_AVAILABLE}, enabled: {kernels.NUMBA_ENABLED}")
    bench_kernels(args.n)
    if not args.skip_store:
        bench_store(args.store_size, args.queries)


if __name__ == "__main__":
    main()
