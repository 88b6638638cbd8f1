import math
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest

from tensorfeat import kernels
from tensorfeat.extraction import pair_mode_order, project
from tensorfeat.features import (
    FIB_PER_SLICE,
    NZ_PER_FIBER,
    NZ_PER_SLICE,
    FeatureSet,
    compute_global,
    compute_kind_stats,
    fiber_n_all,
    slice_n_all,
)
from tensorfeat.tensor import CooTensor, ModeOrder, reference_extract

EXAMPLE_COORDS = [(1, 1, 1), (1, 2, 2), (2, 1, 1)]


def random_tensor(dims, nnz, seed=0, skew=0.0):
    """Random duplicate-free tensor; ``skew`` > 0 concentrates indices near 1."""
    rng = np.random.default_rng(seed)
    cols = []
    for d in dims:
        if skew > 0:
            x = np.floor(d * rng.random(nnz) ** (1 + skew)).astype(np.int64)
        else:
            x = rng.integers(0, d, nnz)
        cols.append(np.minimum(x, d - 1))
    idx = np.unique(np.stack(cols).astype(np.uint64), axis=1)
    return CooTensor(dims, idx, rng.random(idx.shape[1]))


def oracle_features(t: CooTensor, modes=None) -> FeatureSet:
    """Feature set assembled from the dense reference tally, mode by mode."""
    modes = tuple(range(1, t.order + 1)) if modes is None else tuple(sorted(modes))
    view = project(t, modes) if len(modes) != t.order else t
    local = {m: i + 1 for i, m in enumerate(modes)}
    fib, slc, fps = {}, {}, {}
    for pair in combinations(modes, 2):
        perm = pair_mode_order(pair, modes)
        ca = reference_extract(view, ModeOrder(tuple(local[m] for m in perm)))
        slc[pair] = ca.n_nz_slc
        fps[pair] = ca.n_fib_slc
        fib[perm[-1]] = ca.n_nz_fib
    for m in modes:
        if m not in fib:
            rest = [x for x in modes if x != m]
            perm = tuple(local[x] for x in rest + [m])
            fib[m] = reference_extract(view, ModeOrder(perm)).n_nz_fib
    blocks = {}
    for m, c in fib.items():
        blocks[(NZ_PER_FIBER, (m,))] = compute_kind_stats(c, fiber_n_all(t.dims, m, modes))
    for p in slc:
        n = slice_n_all(t.dims, p, modes)
        blocks[(NZ_PER_SLICE, p)] = compute_kind_stats(slc[p], n)
        blocks[(FIB_PER_SLICE, p)] = compute_kind_stats(fps[p], n)
    glob = compute_global(t.dims, t.nnz, {m: len(c) for m, c in fib.items()}, {p: len(c) for p, c in slc.items()})
    return FeatureSet(glob, blocks, {})


def exact_stats(counts, n_all):
    """Textbook statistics in rational arithmetic over the zero-padded array."""
    padded = [Fraction(c) for c in counts] + [Fraction(0)] * (n_all - len(counts))

    def spread(vals):
        n = len(vals)
        avg = sum(vals) / n
        var = sum((v - avg) ** 2 for v in vals) / n
        return avg, var

    avg_all, var_all = spread(padded)
    avg_nz, var_nz = spread([Fraction(c) for c in counts])
    mx = max(counts)
    return {
        "avg_all": float(avg_all),
        "stdev_all": math.sqrt(var_all),
        "imbal_all": float((mx - avg_all) / mx),
        "cv_all": math.sqrt(var_all) / float(avg_all),
        "avg_nz": float(avg_nz),
        "stdev_nz": math.sqrt(var_nz),
        "imbal_nz": float((mx - avg_nz) / mx),
        "cv_nz": math.sqrt(var_nz) / float(avg_nz),
    }


@pytest.fixture
def example_tensor():
    return CooTensor.from_coords((2, 2, 2), EXAMPLE_COORDS)


@pytest.fixture
def dense222():
    coords = [(i, j, k) for i in (1, 2) for j in (1, 2) for k in (1, 2)]
    return CooTensor.from_coords((2, 2, 2), coords)


@pytest.fixture(params=kernels.available())
def backend(request):
    with kernels.use_backend(request.param):
        yield request.param
