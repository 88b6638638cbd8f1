"""COO tensor model, FROSTT text I/O, mode orders and the dense reference tally."""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass
from typing import BinaryIO, Optional, Sequence, Union

import numpy as np

from .errors import (
    ArityError,
    BoundsError,
    DuplicateError,
    FormatError,
    InvalidIndexError,
    OracleCapError,
)

ORACLE_CELL_CAP = 10**8


class CooTensor:
    """Order-M sparse tensor stored as M parallel index columns plus values.

    Indices are held 0-based as a ``(M, NNZ)`` uint64 array; the 1-based
    FROSTT convention only appears in :func:`load_frostt`, :func:`write_frostt`
    and :meth:`coords1`.

    Parameters
    ----------
    dims : sequence of int
        Mode sizes I_1..I_M.
    indices : array_like, shape (M, NNZ)
        0-based coordinates, one row per mode.
    values : array_like, shape (NNZ,)
    check : bool
        Validate bounds and reject duplicate coordinates.  Projections made
        for top-3 extraction turn this off because they may repeat
        coordinates on purpose.
    """

    __slots__ = ("dims", "indices", "values")

    def __init__(self, dims, indices, values=None, *, check=True):
        dims = tuple(int(d) for d in dims)
        indices = np.asarray(indices, dtype=np.uint64)
        if indices.ndim != 2 or indices.shape[0] != len(dims):
            raise ArityError(
                f"indices must have shape (order, nnz); got {indices.shape} for order {len(dims)}"
            )
        if values is None:
            values = np.ones(indices.shape[1], dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (indices.shape[1],):
            raise ValueError("values must hold one entry per nonzero")
        if any(d < 1 for d in dims):
            raise ValueError(f"dimension sizes must be positive: {dims}")
        self.dims = dims
        self.indices = np.ascontiguousarray(indices)
        self.values = values
        if check:
            self._check()

    def _check(self):
        for m, d in enumerate(self.dims):
            col = self.indices[m]
            if col.size and int(col.max()) >= d:
                raise BoundsError(f"mode {m + 1} index exceeds dimension {d}")
        dup = _duplicate_mask(self.indices)
        if dup.any():
            k = int(np.flatnonzero(dup)[0])
            raise DuplicateError(f"duplicate coordinate {tuple(self.coords1()[k])}")

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[1])

    def coords1(self) -> np.ndarray:
        """Coordinates as an (NNZ, M) array of 1-based indices."""
        return self.indices.T.astype(np.uint64) + np.uint64(1)

    def coordinate_set(self) -> set:
        return set(map(tuple, self.coords1().tolist()))

    def __eq__(self, other):
        if not isinstance(other, CooTensor):
            return NotImplemented
        return (
            self.dims == other.dims
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"CooTensor(dims={self.dims}, nnz={self.nnz})"

    @classmethod
    def from_coords(cls, dims, coords, values=None, **kw):
        """Build from 1-based coordinate tuples (tests, small fixtures)."""
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, len(dims))
        if (coords < 1).any():
            raise InvalidIndexError("indices are 1-based")
        return cls(dims, (coords - 1).T.astype(np.uint64), values, **kw)


@dataclass(frozen=True)
class ModeOrder:
    """Permutation <p_1, ..., p_M> of the modes 1..M (1-based)."""

    perm: tuple

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        object.__setattr__(self, "perm", perm)
        if sorted(perm) != list(range(1, len(perm) + 1)):
            raise ArityError(f"{perm} is not a permutation of 1..{len(perm)}")

    def __len__(self):
        return len(self.perm)

    @property
    def zero_based(self) -> tuple:
        return tuple(p - 1 for p in self.perm)

    @property
    def fiber_mode(self) -> int:
        return self.perm[-1]

    @property
    def slice_modes(self) -> tuple:
        return tuple(sorted(self.perm[-2:]))

    def __str__(self):
        return "<" + ",".join(map(str, self.perm)) + ">"

    @classmethod
    def identity(cls, order):
        return cls(tuple(range(1, order + 1)))


@dataclass
class CountArrays:
    """Count arrays for one mode order.

    ``n_nz_slc`` nonzeros per nonzero slice, ``n_fib_slc`` nonzero fibers per
    nonzero slice, ``n_nz_fib`` nonzeros per nonzero fiber.  Slices fix all
    but the last two permuted modes, fibers all but the last.
    """

    mode_order: ModeOrder
    n_nz_slc: np.ndarray
    n_fib_slc: np.ndarray
    n_nz_fib: np.ndarray
    slice_ids: Optional[np.ndarray] = None
    fiber_ids: Optional[np.ndarray] = None
    path: str = ""
    aux_words: int = 0

    def check_sums(self, nnz: int) -> bool:
        return (
            int(self.n_nz_slc.sum()) == nnz
            and int(self.n_nz_fib.sum()) == nnz
            and int(self.n_fib_slc.sum()) == len(self.n_nz_fib)
        )


def _duplicate_mask(indices: np.ndarray) -> np.ndarray:
    """True for every row that repeats an earlier coordinate (in sort order)."""
    n = indices.shape[1]
    if n < 2:
        return np.zeros(n, dtype=bool)
    order = np.lexsort(indices[::-1])
    srt = indices[:, order]
    same = np.all(srt[:, 1:] == srt[:, :-1], axis=0)
    mask = np.zeros(n, dtype=bool)
    mask[order[1:][same]] = True
    return mask


def _open_source(source):
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read()
    data = source.read()
    return data.encode("ascii") if isinstance(data, str) else data


def _parse_ints(tokens, linenos):
    """Parse an (n, M) array of index tokens into int64, or uint64 when too large."""
    try:
        return tokens.astype(np.int64)
    except OverflowError:
        pass
    except ValueError:
        for r, row in enumerate(tokens):
            for tok in row:
                try:
                    int(tok)
                except ValueError:
                    raise FormatError(f"non-integer index {str(tok)!r}", linenos[r]) from None
        raise
    big = [[int(tok) for tok in row] for row in tokens]
    for r, row in enumerate(big):
        for c, v in enumerate(row):
            if v < 1:
                raise InvalidIndexError(
                    f"index {v} in mode {c + 1} is not positive (indices are 1-based)", linenos[r]
                )
            if v >= 2**64:
                raise BoundsError(f"index {v} does not fit in 64 bits", linenos[r])
    return np.array(big, dtype=np.uint64)


def load_frostt(
    source: Union[str, os.PathLike, BinaryIO],
    declared_dims: Optional[Sequence[int]] = None,
    duplicates: str = "reject",
) -> CooTensor:
    """Read a FROSTT ``.tns`` stream.

    Each nonempty, non-``#`` line holds M 1-based integer indices followed by
    one value.  Dimensions default to the per-mode maximum index.

    Parameters
    ----------
    source : path or binary stream
    declared_dims : sequence of int, optional
    duplicates : {"reject", "sum"}
        ``"sum"`` merges repeated coordinates by adding their values.

    Raises
    ------
    FormatError, InvalidIndexError, BoundsError, DuplicateError
    """
    if duplicates not in ("reject", "sum"):
        raise ValueError(f"unknown duplicate policy {duplicates!r}")
    text = _open_source(source).decode("ascii")
    rows = []
    linenos = []
    width = None
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if width is None:
            width = len(parts)
            if width < 2:
                raise FormatError("expected indices followed by a value", lineno)
        elif len(parts) != width:
            raise FormatError(f"expected {width} columns, found {len(parts)}", lineno)
        rows.append(parts)
        linenos.append(lineno)
    if width is None:
        if declared_dims is None:
            raise FormatError("empty tensor file: order cannot be determined")
        m = len(declared_dims)
        return CooTensor(declared_dims, np.zeros((m, 0), dtype=np.uint64), np.zeros(0))
    order = width - 1
    if declared_dims is not None and len(declared_dims) != order:
        raise FormatError(f"file has order {order} but {len(declared_dims)} dims were declared")
    toks = np.array(rows, dtype=object)
    idx = _parse_ints(toks[:, :order].astype(str), linenos)
    try:
        values = np.array(toks[:, order].astype(str), dtype=np.float64)
    except ValueError:
        for r, tok in enumerate(toks[:, order]):
            try:
                float(tok)
            except ValueError:
                raise FormatError(f"bad value {tok!r}", linenos[r]) from None
        raise
    if idx.dtype != np.uint64:
        bad = np.argwhere(idx < 1)
        if bad.size:
            r, c = bad[0]
            raise InvalidIndexError(
                f"index {int(idx[r, c])} in mode {c + 1} is not positive (indices are 1-based)",
                linenos[r],
            )
        idx = idx.astype(np.uint64)
    elif (idx == 0).any():
        r, c = np.argwhere(idx == 0)[0]
        raise InvalidIndexError(f"index 0 in mode {c + 1} (indices are 1-based)", linenos[r])
    if declared_dims is None:
        dims = tuple(int(x) for x in idx.max(axis=0))
    else:
        dims = tuple(int(d) for d in declared_dims)
        for m, d in enumerate(dims):
            over = np.flatnonzero(idx[:, m] > np.uint64(d))
            if over.size:
                r = int(over[0])
                raise BoundsError(
                    f"index {int(idx[r, m])} exceeds declared size {d} of mode {m + 1}", linenos[r]
                )
    zb = (idx - np.uint64(1)).T
    dup = _duplicate_mask(zb)
    if dup.any():
        if duplicates == "reject":
            r = int(np.flatnonzero(dup)[0])
            raise DuplicateError(f"duplicate coordinate {tuple(int(v) for v in idx[r])}", linenos[r])
        zb, values = _merge_duplicates(zb, values)
    return CooTensor(dims, zb, values, check=False)


def _merge_duplicates(indices, values):
    order = np.lexsort(indices[::-1])
    srt = indices[:, order]
    new = np.ones(srt.shape[1], dtype=bool)
    new[1:] = np.any(srt[:, 1:] != srt[:, :-1], axis=0)
    starts = np.flatnonzero(new)
    merged = np.add.reduceat(values[order], starts)
    return srt[:, starts], merged


def write_frostt(t: CooTensor, sink: Union[str, os.PathLike, BinaryIO]) -> None:
    """Write one ``i_1 ... i_M value`` line per nonzero (1-based, shortest round-trip floats)."""
    buf = io.StringIO()
    coords = t.coords1().tolist()
    for row, v in zip(coords, t.values.tolist()):
        buf.write(" ".join(map(str, row)))
        buf.write(" ")
        buf.write(repr(v))
        buf.write("\n")
    data = buf.getvalue().encode("ascii")
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)


def _as_mode_order(mo, order) -> ModeOrder:
    if not isinstance(mo, ModeOrder):
        mo = ModeOrder(tuple(mo))
    if len(mo) != order:
        raise ArityError(f"mode order {mo} has length {len(mo)}, tensor order is {order}")
    return mo


def permute(t: CooTensor, mo) -> CooTensor:
    """Column m of the result is column p_m of ``t``; dims follow."""
    mo = _as_mode_order(mo, t.order)
    z = list(mo.zero_based)
    return CooTensor(
        tuple(t.dims[p] for p in z), t.indices[z], t.values, check=False
    )


def sort_order(t: CooTensor, mo) -> np.ndarray:
    """Stable permutation that sorts nonzeros by (col p_1, ..., col p_M)."""
    mo = _as_mode_order(mo, t.order)
    keys = [t.indices[p] for p in reversed(mo.zero_based)]
    return np.lexsort(keys)


def sort_by_mode_order(t: CooTensor, mo) -> CooTensor:
    """Reorder nonzeros lexicographically under ``mo``; mode layout is kept."""
    order = sort_order(t, mo)
    return CooTensor(t.dims, t.indices[:, order], t.values[order], check=False)


def reference_extract(t: CooTensor, mo, cap: int = ORACLE_CELL_CAP) -> CountArrays:
    """Dense tally of every fiber under ``mo``; the test oracle.

    Allocates one counter per fiber of the last permuted mode, i.e. the
    product of the first M-1 permuted sizes, and refuses beyond ``cap``.
    """
    mo = _as_mode_order(mo, t.order)
    z = mo.zero_based
    lead = [t.dims[p] for p in z[:-1]]
    cells = math.prod(lead)
    if cells > cap:
        raise OracleCapError(f"dense tally needs {cells} cells (cap {cap})")
    if t.nnz == 0:
        e = np.zeros(0, dtype=np.int64)
        return CountArrays(mo, e, e.copy(), e.copy(), path="reference")
    flat = np.ravel_multi_index([t.indices[p].astype(np.int64) for p in z[:-1]], lead)
    grid = np.bincount(flat, minlength=cells).reshape(-1, lead[-1])
    per_slice = grid.sum(axis=1)
    fibers_per_slice = (grid > 0).sum(axis=1)
    live = per_slice > 0
    return CountArrays(
        mo,
        per_slice[live].astype(np.int64),
        fibers_per_slice[live].astype(np.int64),
        grid[grid > 0].astype(np.int64),
        slice_ids=np.flatnonzero(live),
        path="reference",
    )
