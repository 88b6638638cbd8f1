"""Synthetic sparse tensor generation from size-independent structural features.

Slices are the mode-(M-1, M) slices, indexed by the first M-2 coordinates;
fibers vary along mode M and are indexed by the first M-1 coordinates.  The
pipeline is: choose nonzero slices, distribute fibers over them, distribute
nonzeros over the fibers, then assemble coordinates.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, EmptySpecError, IncompleteFeatureError, InfeasibleSpecError
from .features import FIB_PER_SLICE, NZ_PER_FIBER, NZ_PER_SLICE, FeatureSet
from .rng import (
    DEFAULT_WINDOW,
    KIND_FIB_PER_SLICE,
    KIND_NZ_PER_FIBER,
    KIND_SLICES,
    KIND_VALUES,
    RngStream,
    distribute,
    rand_inds,
    round_half_away,
    stream_id,
)
from .tensor import CooTensor

# slice density above which every slice is taken
FULL_SLICE_DENSITY = 0.97
PRESENCE_DENSITY = 0.5
BERNOULLI_DENSITY = 0.1


@dataclass(frozen=True)
class GeneratorSpec:
    """Target features for one synthetic tensor.

    ``cv_fib``/``imbal_fib`` describe fibers per nonzero slice, ``cv_nz``/
    ``imbal_nz`` nonzeros per nonzero fiber.  Values are always uniform(0, 1).
    """

    dims: Tuple[int, ...]
    d_slc: float
    d_fib: float
    d_nz: float
    cv_fib: float = 0.0
    cv_nz: float = 0.0
    imbal_fib: float = 0.0
    imbal_nz: float = 0.0
    seed: int = 0
    window: Tuple[float, float] = DEFAULT_WINDOW

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "window", tuple(float(w) for w in self.window))
        if len(self.dims) < 3:
            raise DomainError("the generator needs at least three modes")
        if any(d < 1 for d in self.dims):
            raise DomainError(f"dims must be positive: {self.dims}")
        for name in ("d_slc", "d_fib", "d_nz"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise DomainError(f"{name}={v} must lie in (0, 1]")
        for name in ("cv_fib", "cv_nz"):
            if not getattr(self, name) >= 0:
                raise DomainError(f"{name} must be nonnegative")
        for name in ("imbal_fib", "imbal_nz"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise DomainError(f"{name}={v} must lie in [0, 1)")
        lo, hi = self.window
        if not 0 < lo <= 1 <= hi:
            raise DomainError(f"scaling window {self.window} must bracket 1")

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def slice_dims(self) -> Tuple[int, ...]:
        return self.dims[:-2]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["window"] = list(self.window)
        return d


@dataclass
class DerivedParams:
    nslc: int
    avg_fib: float
    std_fib: float
    max_fib: float
    nfib_target: float
    avg_nz: Optional[float] = None
    std_nz: Optional[float] = None
    max_nz: Optional[float] = None


def _round_int(x: float) -> int:
    return int(round_half_away(np.array([x]))[0])


def derive_slice_params(spec: GeneratorSpec) -> DerivedParams:
    """Slice count and fibers-per-slice parameters.

    Densities above 0.97 take every slice, as the slice sampler does.
    """
    space = math.prod(spec.slice_dims)
    nslc = space if spec.d_slc > FULL_SLICE_DENSITY else _round_int(spec.d_slc * space)
    if nslc < 1:
        raise EmptySpecError(f"d_slc={spec.d_slc} leaves no slice among {space}")
    nfib_target = spec.d_fib * math.prod(spec.dims[:-1])
    avg = nfib_target / nslc
    limit = spec.dims[-2]
    if avg > limit:
        raise InfeasibleSpecError(
            f"avg fibers per slice {avg:.6g} exceeds mode-{spec.order - 1} size {limit}"
        )
    if avg < 1:
        raise InfeasibleSpecError(f"avg fibers per slice {avg:.6g} is below 1 (d_fib too small for d_slc)")
    return DerivedParams(nslc, avg, spec.cv_fib * avg, min(avg / (1 - spec.imbal_fib), limit), nfib_target)


def derive_fiber_params(spec: GeneratorSpec, nfib_actual: int) -> Tuple[float, float, float]:
    """Nonzeros-per-fiber parameters given the realized fiber count."""
    if nfib_actual < 1:
        raise EmptySpecError("no fibers to fill")
    nnz_target = spec.d_nz * math.prod(spec.dims)
    avg = nnz_target / nfib_actual
    if avg < 1:
        raise InfeasibleSpecError(f"avg nonzeros per fiber {avg:.6g} is below 1 (d_nz too small for d_fib)")
    limit = spec.dims[-1]
    if avg > limit:
        raise InfeasibleSpecError(f"avg nonzeros per fiber {avg:.6g} exceeds mode-{spec.order} size {limit}")
    return avg, spec.cv_nz * avg, min(avg / (1 - spec.imbal_nz), limit)


def slice_indices(stream: RngStream, d_slc: float, slice_dims: Sequence[int], nslc: int) -> np.ndarray:
    """Distinct nonzero-slice coordinates, sorted, as an (n, M-2) array of 1-based indices.

    The strategy depends on the density: above 0.97 every slice; above 0.5 a
    presence array with uniformly chosen removals; from 0.1 a Bernoulli pass
    corrected to exactly ``nslc`` by uniform additions/removals; below 0.1
    random coordinate tuples with duplicates rejected.
    """
    slice_dims = tuple(int(d) for d in slice_dims)
    space = math.prod(slice_dims)
    nslc = int(nslc)
    if d_slc > FULL_SLICE_DENSITY:
        lin = np.arange(space, dtype=np.int64)
    else:
        if not 0 <= nslc <= space:
            raise DomainError(f"cannot choose {nslc} slices out of {space}")
        if d_slc > PRESENCE_DENSITY:
            keep = np.ones(space, dtype=bool)
            keep[rand_inds(stream, space - nslc, space) - 1] = False
            lin = np.flatnonzero(keep)
        elif d_slc >= BERNOULLI_DENSITY:
            chosen = stream.uniforms(space) < d_slc
            k = int(chosen.sum())
            if k > nslc:
                pos = np.flatnonzero(chosen)
                chosen[pos[rand_inds(stream, k - nslc, k) - 1]] = False
            elif k < nslc:
                pos = np.flatnonzero(~chosen)
                chosen[pos[rand_inds(stream, nslc - k, space - k) - 1]] = True
            lin = np.flatnonzero(chosen)
        else:
            lin = _tuple_draws(stream, slice_dims, nslc)
    if space >= 2**63:
        return lin  # already coordinate tuples
    return np.stack(np.unravel_index(lin, slice_dims), axis=1).astype(np.int64) + 1 if lin.size else np.zeros(
        (0, len(slice_dims)), dtype=np.int64
    )


def _tuple_draws(stream: RngStream, slice_dims, nslc) -> np.ndarray:
    """Draw coordinate tuples uniformly, keeping first occurrences, until ``nslc`` are distinct."""
    dims = np.array(slice_dims, dtype=np.float64)
    seen = np.zeros(0, dtype=np.int64)
    big = math.prod(slice_dims) >= 2**63
    rows = np.zeros((0, len(slice_dims)), dtype=np.int64)
    while (rows.shape[0] if big else seen.size) < nslc:
        need = nslc - (rows.shape[0] if big else seen.size)
        u = stream.uniforms(need * len(slice_dims)).reshape(need, len(slice_dims))
        coords = np.minimum(np.floor(u * dims), dims - 1).astype(np.int64)
        if big:
            allrows = np.concatenate([rows, coords])
            _, first = np.unique(allrows, axis=0, return_index=True)
            rows = allrows[np.sort(first)]
            continue
        lin = np.ravel_multi_index(coords.T, slice_dims)
        allv = np.concatenate([seen, lin])
        _, first = np.unique(allv, return_index=True)
        seen = allv[np.sort(first)]
    if big:
        order = np.lexsort(rows.T[::-1])
        return rows[order] + 1
    return np.sort(seen)


@dataclass
class GenerationReport:
    nslc: int
    nfib: int
    nnz: int
    nnz_target: float
    nfib_target: float
    clamped_fib: float
    clamped_nz: float
    branch_fib: str
    branch_nz: str
    scaled_fib: bool
    scaled_nz: bool
    elapsed_s: float = 0.0
    params: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = True) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("elapsed_s")
        return d


def generate_with_report(spec: GeneratorSpec, workers: int = 1) -> Tuple[CooTensor, GenerationReport]:
    """Generate a tensor for ``spec``; the result only depends on ``spec``.

    Returns the tensor (canonically sorted, duplicate-free) and a summary of
    realized counts, clamping and scaling.
    """
    t0 = time.perf_counter()
    p = derive_slice_params(spec)
    seed = spec.seed
    slc = slice_indices(RngStream(seed, stream_id(KIND_SLICES)), spec.d_slc, spec.slice_dims, p.nslc)
    nslc = slc.shape[0]
    fib = distribute(
        RngStream(seed, stream_id(KIND_FIB_PER_SLICE)),
        nslc, p.avg_fib, p.std_fib, p.max_fib, spec.dims[-2], window=spec.window, workers=workers,
    )
    nfib = int(fib.cnt.sum())
    p.avg_nz, p.std_nz, p.max_nz = derive_fiber_params(spec, nfib)
    nz = distribute(
        RngStream(seed, stream_id(KIND_NZ_PER_FIBER)),
        nfib, p.avg_nz, p.std_nz, p.max_nz, spec.dims[-1], window=spec.window, workers=workers,
    )
    nnz = int(nz.cnt.sum())
    # every level is already sorted, so the repeat-expansion is in canonical order
    fiber_slice = np.repeat(np.arange(nslc), fib.cnt)
    nz_fiber = np.repeat(np.arange(nfib), nz.cnt)
    idx = np.empty((spec.order, nnz), dtype=np.uint64)
    lead = (slc - 1).astype(np.uint64)
    for m in range(spec.order - 2):
        idx[m] = lead[fiber_slice[nz_fiber], m]
    idx[-2] = (fib.inds - 1).astype(np.uint64)[nz_fiber]
    idx[-1] = (nz.inds - 1).astype(np.uint64)
    values = RngStream(seed, stream_id(KIND_VALUES)).uniforms(nnz)
    t = CooTensor(spec.dims, idx, values, check=False)
    report = GenerationReport(
        nslc=nslc,
        nfib=nfib,
        nnz=nnz,
        nnz_target=spec.d_nz * math.prod(spec.dims),
        nfib_target=p.nfib_target,
        clamped_fib=fib.clamped_fraction,
        clamped_nz=nz.clamped_fraction,
        branch_fib=fib.branch,
        branch_nz=nz.branch,
        scaled_fib=fib.scaled,
        scaled_nz=nz.scaled,
        elapsed_s=time.perf_counter() - t0,
        params=asdict(p),
    )
    return t, report


def generate(spec: GeneratorSpec, workers: int = 1) -> CooTensor:
    return generate_with_report(spec, workers=workers)[0]


def spec_from_features(
    fs: FeatureSet,
    target_dims: Optional[Sequence[int]] = None,
    seed: int = 0,
    window: Tuple[float, float] = DEFAULT_WINDOW,
) -> GeneratorSpec:
    """Generator inputs from the mode-(M-1, M) slice blocks and mode-M fiber block of ``fs``.

    ``target_dims`` swaps in other sizes of the same order; the size-independent
    features carry over unchanged.
    """
    dims = tuple(fs.global_features.sizes)
    m = len(dims)
    pair = (m - 1, m)
    need = [(NZ_PER_SLICE, pair), (FIB_PER_SLICE, pair), (NZ_PER_FIBER, (m,))]
    missing = [f"{k}:{'-'.join(map(str, md))}" for k, md in need if (k, md) not in fs.blocks]
    if missing:
        raise IncompleteFeatureError(f"feature set lacks blocks {missing}")
    if target_dims is not None:
        target_dims = tuple(int(d) for d in target_dims)
        if len(target_dims) != m:
            raise DomainError(f"target dims {target_dims} do not match order {m}")
        dims = target_dims
    slc = fs.block(NZ_PER_SLICE, pair)
    fps = fs.block(FIB_PER_SLICE, pair)
    npf = fs.block(NZ_PER_FIBER, (m,))
    return GeneratorSpec(
        dims=dims,
        d_slc=slc.nz_density,
        d_fib=npf.nz_density,
        d_nz=fs.global_features.d_nz,
        cv_fib=fps.cv_nz,
        cv_nz=npf.cv_nz,
        imbal_fib=fps.imbal_nz,
        imbal_nz=npf.imbal_nz,
        seed=seed,
        window=window,
    )


def with_seed(spec: GeneratorSpec, seed: int) -> GeneratorSpec:
    return replace(spec, seed=seed)
