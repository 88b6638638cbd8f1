"""Compare the compiled kernels against the numpy fallback.

Times each hot kernel and a full extraction on the same synthetic tensor
under both backends, checks that the outputs agree, and prints a CSV table
(kernel, backend, seconds, speedup vs python).

    python benchmarks/bench_kernels.py --nnz 1000000 --reps 3
"""

import argparse
import csv
import sys
import time

import numpy as np

from tensorfeat import kernels
from tensorfeat.extraction import MethodChoice, extract, pack_keys
from tensorfeat.features import serialize
from tensorfeat.tensor import CooTensor, sort_order
from tensorfeat.rng import RngStream


def make_tensor(dims, nnz, seed):
    rng = np.random.default_rng(seed)
    idx = np.stack([rng.integers(0, d, nnz, dtype=np.uint64) for d in dims])
    idx = np.unique(idx, axis=1)
    return CooTensor(dims, idx, check=False)


def best_of(fn, reps):
    best = float("inf")
    out = None
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(t):
    slc = t.indices[0].astype(np.int64)
    fib = t.indices[1].astype(np.int64)
    cols = np.ascontiguousarray(t.indices[:, sort_order(t, (1, 2, 3))])
    keys = pack_keys(t, [1, 2])
    counts = np.full(max(1, t.nnz // 20), 20, dtype=np.int64)
    u = RngStream(7).uniforms(int(counts.sum()))
    return {
        "group_counts": lambda: kernels.group_counts(slc, fib, t.dims[0], t.dims[1]),
        "sorted_run_counts": lambda: kernels.sorted_run_counts(cols),
        "hash_tally": lambda: kernels.hash_tally(keys)[1].sum(),
        "sample_distinct": lambda: kernels.sample_distinct(counts, 1000, u),
        "extract_hash": lambda: serialize(extract(t, MethodChoice("hash", "all"), workers=1), include_timing=False),
        "extract_hybrid": lambda: serialize(extract(t, MethodChoice("hybrid", "all"), workers=1), include_timing=False),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", default="2000,1500,1000")
    ap.add_argument("--nnz", type=int, default=300_000)
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if "compiled" not in kernels.available():
        print("compiled kernels are not built; only the python backend is available", file=sys.stderr)
    t = make_tensor(tuple(int(x) for x in args.dims.split(",")), args.nnz, args.seed)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["kernel", "backend", "seconds", "speedup_vs_python", "agrees"])
    for name in cases(t):
        results = {}
        for backend in ["python"] + [b for b in kernels.available() if b != "python"]:
            with kernels.use_backend(backend):
                results[backend] = best_of(cases(t)[name], args.reps)
        base_time, base_out = results["python"]
        for backend, (secs, out) in results.items():
            # hash tables may list keys in a different order, so compare the total only
            agrees = same(base_out, out) if name not in ("group_counts",) else same(base_out[:4], out[:4])
            w.writerow([name, backend, f"{secs:.6f}", f"{base_time / secs:.2f}", agrees])


if __name__ == "__main__":
    main()
