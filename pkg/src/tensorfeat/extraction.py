"""Feature extraction: hash, sort, group and hybrid count construction plus final reduction."""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import GroupingMemoryError, UnsupportedCombination, UnsupportedOrderError
from .features import (
    ALL_MODES,
    FIB_PER_SLICE,
    NZ_PER_FIBER,
    NZ_PER_SLICE,
    ONLY_3_MODE,
    FeatureSet,
    compute_global,
    compute_kind_stats,
    fiber_n_all,
    largest_modes,
    normalize_scope,
    slice_n_all,
)
from .tensor import CooTensor, CountArrays, ModeOrder, _as_mode_order, sort_order

DEFAULT_LAMBDA = 1e11
# auxiliary words the grouping method may allocate before refusing
GROUP_WORD_CAP = 1 << 28

METHODS = ("hash", "sort", "group", "hybrid")


@dataclass(frozen=True)
class MethodChoice:
    method: str = "hybrid"
    scope: str = ONLY_3_MODE
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        object.__setattr__(self, "scope", normalize_scope(self.scope))
        if not self.lam > 0:
            raise ValueError("lambda must be positive")


def select_top3_modes(t_or_dims) -> Tuple[int, int, int]:
    """The three largest modes (1-based), largest first; ties go to the lower mode."""
    dims = t_or_dims.dims if isinstance(t_or_dims, CooTensor) else tuple(t_or_dims)
    if len(dims) < 3:
        raise UnsupportedOrderError(f"order {len(dims)} < 3 is not supported")
    return largest_modes(dims, 3)


def project(t: CooTensor, modes: Sequence[int]) -> CooTensor:
    """Keep only ``modes`` (1-based, in the given order).

    Distinct nonzeros may collapse onto one projected coordinate; they are
    kept as repeated entries so the nonzero total is preserved.
    """
    z = [m - 1 for m in modes]
    return CooTensor(tuple(t.dims[m] for m in z), t.indices[z], t.values, check=False)


def paired_fiber_mode(pair: Tuple[int, int], modes: Sequence[int]) -> int:
    """Fiber mode whose fibers are counted per slice of ``pair``.

    Walking the covered modes cyclically, the pair member reached second is
    the fiber mode; for three modes this reproduces the mode orders
    <1,2,3>, <2,3,1>, <3,1,2>.
    """
    modes = list(modes)
    n = len(modes)
    a, b = modes.index(pair[0]), modes.index(pair[1])
    return pair[1] if (b - a) % n <= (a - b) % n else pair[0]


def pair_mode_order(pair: Tuple[int, int], modes: Sequence[int]) -> Tuple[int, ...]:
    """Mode order (over ``modes``) whose last two entries are ``pair``, fiber mode last."""
    f = paired_fiber_mode(pair, modes)
    other = pair[0] if f == pair[1] else pair[1]
    rest = [m for m in modes if m not in pair]
    return tuple(rest + [other, f])


def mode_order_set(order: int) -> List[ModeOrder]:
    """Cyclic mode orders <1,2,...,M>, <2,...,M,1>, ... (M of them)."""
    base = list(range(1, order + 1))
    return [ModeOrder(tuple(base[i:] + base[:i])) for i in range(order)]


def decision_metric(dims: Sequence[int], mo) -> int:
    """Product of the two leading permuted mode sizes (hybrid dispatch metric)."""
    mo = _as_mode_order(mo, len(dims))
    p = mo.zero_based
    return int(dims[p[0]]) * int(dims[p[1]])


# -- count construction ------------------------------------------------------

def _permuted_cols(t: CooTensor, mo: ModeOrder) -> np.ndarray:
    return t.indices[list(mo.zero_based)]


def build_counts_sort(t: CooTensor, mo) -> CountArrays:
    """Sort nonzeros under ``mo`` and scan slice and fiber runs."""
    mo = _as_mode_order(mo, t.order)
    if t.order < 3:
        raise UnsupportedOrderError("order must be at least 3")
    order = sort_order(t, mo)
    cols = np.ascontiguousarray(_permuted_cols(t, mo)[:, order])
    n_nz_slc, n_fib_slc, n_nz_fib = kernels.sorted_run_counts(cols)
    return CountArrays(mo, n_nz_slc, n_fib_slc, n_nz_fib, path="sort")


def build_counts_group(t: CooTensor, mo, cap: int = GROUP_WORD_CAP) -> CountArrays:
    """Grouping-based construction: dense slice tally, bucket by slice, per-slice fiber tally.

    For order > 3 the slice index is the linearized tuple of the first M-2
    permuted modes.  Raises :class:`GroupingMemoryError` when the auxiliary
    arrays would exceed ``cap`` words.
    """
    mo = _as_mode_order(mo, t.order)
    if t.order < 3:
        raise UnsupportedOrderError("order must be at least 3")
    z = mo.zero_based
    slice_dims = [t.dims[p] for p in z[:-2]]
    n_slc = math.prod(slice_dims)
    n_fib = t.dims[z[-2]]
    need = 2 * n_slc + n_fib + 2 * t.nnz + 1
    if need > cap:
        raise GroupingMemoryError(
            f"grouping under {mo} needs ~{need} words of scratch (cap {cap})"
        )
    if len(slice_dims) == 1:
        slc = t.indices[z[0]].astype(np.int64)
    else:
        slc = np.ravel_multi_index([t.indices[p].astype(np.int64) for p in z[:-2]], slice_dims)
    fib = t.indices[z[-2]].astype(np.int64)
    n_nz_slc, ind_slc, n_fib_slc, n_nz_fib, aux = kernels.group_counts(slc, fib, n_slc, n_fib)
    return CountArrays(
        mo, n_nz_slc, n_fib_slc, n_nz_fib, slice_ids=ind_slc, path="group", aux_words=aux
    )


def build_counts_hybrid(t: CooTensor, mo, lam: float = DEFAULT_LAMBDA, cap: int = GROUP_WORD_CAP) -> CountArrays:
    """Group when the leading two permuted sizes multiply to less than ``lam``, else sort."""
    mo = _as_mode_order(mo, t.order)
    if decision_metric(t.dims, mo) < lam:
        return build_counts_group(t, mo, cap=cap)
    return build_counts_sort(t, mo)


def pack_keys(t: CooTensor, modes: Sequence[int]) -> np.ndarray:
    """Bit-pack the coordinates of ``modes`` (1-based) into uint64 words.

    Each mode gets ``bit_length(I_m - 1)`` bits; fields never straddle a word.
    One word suffices while the packed width stays within 64 bits, otherwise
    the key grows to two (128-bit) or more words.
    """
    words: List[List[Tuple[int, int]]] = [[]]
    used = 0
    for m in modes:
        bits = max(int(t.dims[m - 1] - 1).bit_length(), 0)
        if used + bits > 64:
            words.append([])
            used = 0
        words[-1].append((m, used))
        used += bits
    out = np.zeros((t.nnz, len(words)), dtype=np.uint64)
    for w, fields_ in enumerate(words):
        for m, shift in fields_:
            out[:, w] |= t.indices[m - 1] << np.uint64(shift)
    return out


@dataclass
class HashCounts:
    """Per-block tallies from the hash method, keyed by original mode numbers."""

    modes: Tuple[int, ...]
    nz_per_fiber: Dict[int, np.ndarray] = field(default_factory=dict)
    nz_per_slice: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    fib_per_slice: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    fiber_tables: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)

    def fiber_map(self, t: CooTensor, mode: int) -> Dict[Tuple[int, ...], int]:
        """Mode-``mode`` fiber tally as {1-based fixed coordinates: nonzeros}."""
        _, counts, first = self.fiber_tables[mode]
        fixed = [m - 1 for m in self.modes if m != mode]
        coords = (t.indices[fixed][:, first] + np.uint64(1)).T.tolist()
        return {tuple(c): int(n) for c, n in zip(coords, counts.tolist())}

    def count_arrays(self, pair: Tuple[int, int]) -> CountArrays:
        f = paired_fiber_mode(pair, self.modes)
        return CountArrays(
            ModeOrder(_local_perm(pair_mode_order(pair, self.modes), self.modes)),
            self.nz_per_slice[pair],
            self.fib_per_slice[pair],
            self.nz_per_fiber[f],
            path="hash",
        )


def _local_perm(perm, modes):
    pos = {m: i + 1 for i, m in enumerate(modes)}
    return tuple(pos[m] for m in perm)


def _hash_fiber(view: CooTensor, local: Dict[int, int], mode: int):
    fixed = [local[m] for m in sorted(local) if m != mode]
    keys = pack_keys(view, fixed)
    return kernels.hash_tally(keys)


def _hash_slice(view: CooTensor, local: Dict[int, int], pair, fiber_table, fiber_mode):
    fixed = [local[m] for m in sorted(local) if m not in pair]
    keys = pack_keys(view, fixed)
    _, per_slice, _ = kernels.hash_tally(keys)
    # second level: distinct fibers of the paired mode, re-keyed by their slice
    _, _, first = fiber_table
    _, fib_per, _ = kernels.hash_tally(keys[first])
    return per_slice, fib_per


def build_counts_hash(t: CooTensor, covered_modes: Optional[Sequence[int]] = None, workers: int = 1) -> HashCounts:
    """Hash-table tallies for every fiber mode and slice pair of ``covered_modes``.

    Fibers are keyed by their M-1 fixed coordinates, slices by their M-2;
    fibers per slice come from re-keying each distinct fiber of the paired
    fiber mode by its slice.  When ``covered_modes`` is a strict subset the
    tensor is projected onto it first.
    """
    if t.order < 3:
        raise UnsupportedOrderError("order must be at least 3")
    modes = tuple(sorted(covered_modes)) if covered_modes is not None else tuple(range(1, t.order + 1))
    view = project(t, modes) if len(modes) != t.order else t
    local = {m: i + 1 for i, m in enumerate(modes)}
    out = HashCounts(modes)
    pairs = list(combinations(modes, 2))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        fib_futs = {m: pool.submit(_hash_fiber, view, local, m) for m in modes}
        for m in modes:
            out.fiber_tables[m] = fib_futs[m].result()
            out.nz_per_fiber[m] = out.fiber_tables[m][1]
        slc_futs = {
            p: pool.submit(
                _hash_slice, view, local, p,
                out.fiber_tables[paired_fiber_mode(p, modes)], paired_fiber_mode(p, modes),
            )
            for p in pairs
        }
        for p in pairs:
            out.nz_per_slice[p], out.fib_per_slice[p] = slc_futs[p].result()
    return out


# -- extraction driver -------------------------------------------------------

def _default_workers():
    return os.cpu_count() or 1


def _mode_order_job(view, mo, choice, cap):
    t0 = time.perf_counter()
    fallback = None
    if choice.method == "sort":
        ca = build_counts_sort(view, mo)
    elif choice.method == "group":
        try:
            ca = build_counts_group(view, mo, cap=cap)
        except GroupingMemoryError as e:
            fallback = str(e)
            ca = build_counts_sort(view, mo)
    else:
        try:
            ca = build_counts_hybrid(view, mo, choice.lam, cap=cap)
        except GroupingMemoryError as e:
            fallback = str(e)
            ca = build_counts_sort(view, mo)
    return ca, fallback, time.perf_counter() - t0


def extract(
    t: CooTensor,
    choice: MethodChoice = MethodChoice(),
    workers: Optional[int] = None,
    group_cap: int = GROUP_WORD_CAP,
) -> FeatureSet:
    """Extract the full feature set of ``t``.

    ``all_modes`` covers every fiber mode and slice pair; ``only_3_mode``
    covers the three largest modes treated as a 3-mode tensor.  The sort,
    group and hybrid methods walk the cyclic mode orders of a 3-mode view;
    the hash method tallies blocks independently and is the only one that
    offers ``all_modes`` above order 3.
    """
    if t.order < 3:
        raise UnsupportedOrderError(f"order {t.order} < 3 is not supported")
    if choice.scope == ALL_MODES and choice.method != "hash" and t.order > 3:
        raise UnsupportedCombination(
            f"all_modes on an order-{t.order} tensor is only available with the hash method"
        )
    workers = workers or _default_workers()
    t0 = time.perf_counter()
    if choice.scope == ONLY_3_MODE:
        modes = tuple(sorted(select_top3_modes(t)))
    else:
        modes = tuple(range(1, t.order + 1))
    view = project(t, modes) if len(modes) != t.order else t
    meta = {
        "method": choice.method,
        "scope": choice.scope,
        "lambda": float(choice.lam),
        "modes": list(modes),
    }
    fiber_counts: Dict[int, np.ndarray] = {}
    slice_counts: Dict[Tuple[int, int], np.ndarray] = {}
    fps_counts: Dict[Tuple[int, int], np.ndarray] = {}
    if choice.method == "hash":
        hc = build_counts_hash(t, modes, workers=workers)
        fiber_counts.update(hc.nz_per_fiber)
        slice_counts.update(hc.nz_per_slice)
        fps_counts.update(hc.fib_per_slice)
    else:
        orders = mode_order_set(3)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda mo: _mode_order_job(view, mo, choice, group_cap), orders))
        paths = {}
        fallbacks = []
        for mo, (ca, fb, _) in zip(orders, results):
            pair = tuple(sorted(modes[p - 1] for p in mo.perm[-2:]))
            fmode = modes[mo.perm[-1] - 1]
            fiber_counts[fmode] = ca.n_nz_fib
            slice_counts[pair] = ca.n_nz_slc
            fps_counts[pair] = ca.n_fib_slc
            paths[str(fmode)] = ca.path
            if fb:
                fallbacks.append(fb)
        meta["paths"] = paths
        if fallbacks:
            meta["fallbacks"] = fallbacks
    jobs = [(NZ_PER_FIBER, (m,), fiber_counts[m], fiber_n_all(t.dims, m, modes)) for m in sorted(fiber_counts)]
    jobs += [(NZ_PER_SLICE, p, slice_counts[p], slice_n_all(t.dims, p, modes)) for p in sorted(slice_counts)]
    jobs += [(FIB_PER_SLICE, p, fps_counts[p], slice_n_all(t.dims, p, modes)) for p in sorted(fps_counts)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        stats = list(pool.map(lambda j: compute_kind_stats(j[2], j[3]), jobs))
    blocks = {(kind, modes_): st for (kind, modes_, _, _), st in zip(jobs, stats)}
    glob = compute_global(
        t.dims,
        t.nnz,
        {m: len(c) for m, c in fiber_counts.items()},
        {p: len(c) for p, c in slice_counts.items()},
    )
    flags = [f"{k}:{'-'.join(map(str, m))} empty" for (k, m), st in sorted(blocks.items()) if st.n_nz == 0]
    if flags:
        meta["flags"] = flags
    meta["wall_time_s"] = time.perf_counter() - t0
    meta["workers"] = workers
    return FeatureSet(glob, blocks, meta)
