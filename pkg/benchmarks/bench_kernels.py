"""Compiled extension vs. pure-Python fallback on the hot kernels.

Usage: python3 benchmarks/bench_kernels.py [--rows 100000] [--trees 50] [--queries 200]

Prints one CSV row per (kernel, backend, path) with the median time per query.
"""

import argparse
import time

import numpy as np

from ocshield import _fallback
from ocshield.harness import make_dataset
from ocshield.trainer import TrainConfig, train

try:
    from ocshield import _core
except ImportError:
    _core = None


def median_time(fn, runs):
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=100_000)
    ap.add_argument("--trees", type=int, default=50)
    ap.add_argument("--queries", type=int, default=200)
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    rows = -(-args.rows // 32) * 32
    block = np.ascontiguousarray(rng.integers(0, 16, (args.trees, rows), dtype=np.uint8))
    ocs = np.ascontiguousarray(rng.integers(0, 16, (args.queries, args.trees), dtype=np.uint8))
    out = np.empty(args.queries, dtype=np.int32)

    backends = [("python", _fallback)] + ([("compiled", _core)] if _core is not None else [])
    print("kernel,backend,path,rows,trees,ms_per_query")
    ref = None
    for name, mod in backends:
        for wide in (True, False):
            if name == "python" and not wide:
                n = max(1, args.queries // 50)  # row loop in the interpreter is slow
            else:
                n = args.queries
            t = median_time(lambda: mod.scan_min_batch(block, ocs[:n], out[:n], wide), args.runs)
            got = out[:n].copy()
            ref = got if ref is None else ref
            assert np.array_equal(got, ref[:n]), "backends disagree"
            path = "simd" if wide else "scalar"
            print(f"scan_min,{name},{path},{rows},{args.trees},{t / n * 1e3:.6f}")

    ds = make_dataset("xor-grid", 4000, args.seed)
    e = train(ds.X, ds.y, TrainConfig(n_trees=20, max_depth=4))
    packed = e._packed
    for name, mod in backends:
        res = np.empty((len(ds.X), e.n_trees), dtype=np.uint8)
        t = median_time(lambda: mod.leaf_paths(*packed, ds.X, res), args.runs)
        print(f"leaf_paths,{name},-,{len(ds.X)},{e.n_trees},{t / len(ds.X) * 1e3:.6f}")


if __name__ == "__main__":
    main()
