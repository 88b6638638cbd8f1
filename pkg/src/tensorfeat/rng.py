"""Counter-based random streams, Box-Muller sampling and the Distribute procedure.

Every random quantity comes from a Philox4x32-10 block cipher keyed by the
64-bit master seed.  The 128-bit counter of draw ``d`` in stream ``s`` is
``[d // 2 (64 bits), s (64 bits)]``; each block yields two 64-bit words and
each word one double in (0, 1).  Because a draw is a pure function of
``(seed, stream, position)`` the output never depends on how work is split
across threads, and per-entity draws for thousands of streams can be
evaluated in one vectorized pass.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np

from . import kernels
from .errors import CapacityError, DomainError, InfeasibleAverageWarning

GENERATOR_NAME = "philox4x32-10"

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_U32 = np.uint64(32)

# stream kinds; a stream id is (kind << 56) | index
KIND_SLICES = 1
KIND_FIB_PER_SLICE = 2
KIND_NZ_PER_FIBER = 3
KIND_VALUES = 4
KIND_USER = 15

DEFAULT_WINDOW = (0.95, 1.05)


def stream_id(kind: int, index: int = 0) -> int:
    if not 0 <= kind < 256 or not 0 <= index < 1 << 56:
        raise ValueError("stream kind must fit 8 bits and index 56 bits")
    return (kind << 56) | index


def philox4x32(ctr: np.ndarray, key: Tuple[int, int]) -> np.ndarray:
    """Philox4x32-10 on a (4, n) array of 32-bit counter words (held as uint64)."""
    x0, x1, x2, x3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in ctr)
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for r in range(10):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = x0 * _M0
        p1 = x2 * _M1
        x0, x1, x2, x3 = (
            (p1 >> _U32) ^ x1 ^ np.uint64(k0),
            p1 & _MASK32,
            (p0 >> _U32) ^ x3 ^ np.uint64(k1),
            p0 & _MASK32,
        )
    return np.stack([x0, x1, x2, x3])


def _uniforms_at(seed: int, sids: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Uniform (0, 1) doubles at positions ``pos`` of streams ``sids`` (aligned arrays)."""
    sids = np.asarray(sids, dtype=np.uint64)
    pos = np.asarray(pos, dtype=np.uint64)
    if pos.size == 0:
        return np.zeros(0, dtype=np.float64)
    block = pos >> np.uint64(1)
    lane = (pos & np.uint64(1)).astype(bool)
    ctr = (block & _MASK32, block >> _U32, sids & _MASK32, sids >> _U32)
    key = (seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF)
    w = philox4x32(ctr, key)
    lo = np.where(lane, w[2], w[0])
    hi = np.where(lane, w[3], w[1])
    bits = ((hi << _U32) | lo) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def uniforms_multi(seed: int, sids, starts, counts) -> np.ndarray:
    """Concatenated draws ``starts[i] .. starts[i]+counts[i]-1`` of each stream ``sids[i]``."""
    counts = np.asarray(counts, dtype=np.int64)
    n = counts.shape[0]
    sids = np.broadcast_to(np.asarray(sids, dtype=np.uint64), (n,))
    starts = np.broadcast_to(np.asarray(starts, dtype=np.int64), (n,))
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.float64)
    ent = np.repeat(np.arange(n), counts)
    offs = np.cumsum(counts) - counts
    pos = starts[ent] + (np.arange(total, dtype=np.int64) - offs[ent])
    return _uniforms_at(seed, sids[ent], pos)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    # wrapping uint64 arithmetic is intended
    with np.errstate(over="ignore"):
        x = np.atleast_1d(np.asarray(x, dtype=np.uint64)) + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


class RngStream:
    """One reproducible stream: ``(master_seed, stream_id)`` plus a draw position.

    Parameters
    ----------
    master_seed : int
        Any integer; reduced to 64 bits.
    stream_id : int
        64-bit stream identifier, see :func:`stream_id`.
    """

    def __init__(self, master_seed: int, stream_id: int = 0, position: int = 0):
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self.position = int(position)

    def __repr__(self):
        return f"RngStream(seed={self.master_seed}, stream={self.stream_id:#x}, pos={self.position})"

    def copy(self) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id, self.position)

    def uniforms(self, n: int) -> np.ndarray:
        """Next ``n`` doubles in (0, 1)."""
        pos = np.arange(self.position, self.position + int(n), dtype=np.uint64)
        self.position += int(n)
        return _uniforms_at(self.master_seed, np.full(pos.shape, self.stream_id, np.uint64), pos)

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def __iter__(self) -> Iterator[float]:
        while True:
            yield self.uniform()

    def normals(self, n: int, avg: float = 0.0, std: float = 1.0) -> np.ndarray:
        """``n`` normal variates, each from two consecutive uniforms via Box-Muller."""
        if std < 0:
            raise DomainError("std must be nonnegative")
        u = self.uniforms(2 * int(n)).reshape(-1, 2)
        return avg + std * _box_muller_z(u[:, 0], u[:, 1])

    def child_ids(self, index) -> np.ndarray:
        """Stream ids of the sub-streams ``index`` (array) of this stream."""
        index = np.asarray(index, dtype=np.uint64)
        return _splitmix64(_splitmix64(np.uint64(self.stream_id)) ^ _splitmix64(index + np.uint64(1)))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.master_seed, int(self.child_ids(np.array([index]))[0]))


def _box_muller_z(u1, u2):
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def box_muller(stream: RngStream, avg: float, std: float) -> float:
    """One normal draw ``avg + std * Z`` consuming two uniforms of ``stream``."""
    if std < 0:
        raise DomainError("std must be nonnegative")
    u1, u2 = stream.uniforms(2)
    if std == 0:
        return float(avg)
    return float(avg + std * _box_muller_z(u1, u2))


def lognormal_params(avg: float, std: float) -> Tuple[float, float]:
    """``(mu, sigma)`` of the normal whose exponential has mean ``avg`` and deviation ``std``."""
    if not avg > 0:
        raise DomainError("log-normal parameters need avg > 0")
    if std < 0:
        raise DomainError("std must be nonnegative")
    mu = math.log(avg * avg / math.sqrt(avg * avg + std * std))
    sigma = math.sqrt(math.log1p((std / avg) ** 2))
    return mu, sigma


def round_half_away(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def rand_inds(stream: RngStream, n: int, limit: int) -> np.ndarray:
    """``n`` distinct uniform indices in [1, limit], ascending."""
    n, limit = int(n), int(limit)
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > limit:
        raise CapacityError(f"cannot draw {n} distinct indices from [1, {limit}]")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    return kernels.sample_distinct(np.array([n]), limit, stream.uniforms(n))


@dataclass
class DistributeResult:
    """Per-entity counts and the flat, per-entity-sorted index lists.

    ``inds`` holds the indices of entity ``i`` at ``offsets[i]:offsets[i+1]``.
    """

    cnt: np.ndarray
    inds: np.ndarray
    offsets: np.ndarray
    branch: str
    ratio: float
    scaled: bool
    clamped: int
    floored: int = 0

    @property
    def n(self) -> int:
        return int(self.cnt.shape[0])

    @property
    def clamped_fraction(self) -> float:
        """Share of entries moved by either bound (raised to 1 or cut to the cap)."""
        return (self.clamped + self.floored) / self.n if self.n else 0.0

    def indices(self, i: int) -> np.ndarray:
        return self.inds[self.offsets[i]:self.offsets[i + 1]]


def count_cap(max_count: float, limit: int) -> int:
    """Largest count allowed: ``max`` rounded up (tolerating float noise), at most ``limit``."""
    return max(1, min(int(math.ceil(max_count - 1e-9)), int(limit)))


def distribute(
    stream: RngStream,
    n: int,
    avg: float,
    std: float,
    max_count: float,
    limit: int,
    window: Tuple[float, float] = DEFAULT_WINDOW,
    with_indices: bool = True,
    workers: int = 1,
) -> DistributeResult:
    """Draw ``n`` positive counts with mean ``avg`` and deviation ``std``, then their indices.

    Counts are normal when ``avg > 3 std`` and log-normal otherwise, rounded
    half away from zero with a floor of 1.  If ``avg`` over the sample mean
    falls outside ``window`` the real-valued draws are rescaled by that ratio
    and rounded again.  Counts are then clamped to ``[1, min(ceil(max), limit)]``
    and each entity receives that many distinct indices in ``[1, limit]``.

    Entity ``i`` draws from sub-stream ``i`` of ``stream``: positions 0 and 1
    feed Box-Muller, positions 2 onward the index sampler.  Results therefore
    do not depend on scheduling; ``workers`` only splits the index sampling
    into contiguous entity chunks.
    """
    n, limit = int(n), int(limit)
    if n < 1 or limit < 1:
        raise DomainError("distribute needs n >= 1 and limit >= 1")
    if not avg >= 1:
        raise DomainError(f"average count {avg} is below 1")
    if std < 0:
        raise DomainError("std must be nonnegative")
    if not max_count >= 1:
        raise DomainError("max must be at least 1")
    if avg > limit:
        warnings.warn(
            f"average {avg:.6g} exceeds the index range {limit}; clamping biases the mean low",
            InfeasibleAverageWarning,
            stacklevel=2,
        )
    sids = stream.child_ids(np.arange(n, dtype=np.uint64))
    u = uniforms_multi(stream.master_seed, np.repeat(sids, 2), np.tile([0, 1], n), np.ones(2 * n, np.int64))
    z = _box_muller_z(u[0::2], u[1::2])
    if avg > 3 * std:
        branch = "normal"
        vals = avg + std * z
    else:
        branch = "lognormal"
        mu, sigma = lognormal_params(avg, std)
        vals = np.exp(mu + sigma * z)
    cnt = np.maximum(round_half_away(vals), 1.0)
    ratio = float(avg / cnt.mean())
    scaled = not (window[0] <= ratio <= window[1])
    if scaled:
        cnt = np.maximum(round_half_away(vals * ratio), 1.0)
    cap = count_cap(max_count, limit)
    floored = int(np.count_nonzero(round_half_away(vals * ratio if scaled else vals) < 1))
    over = cnt > cap
    cnt = np.minimum(cnt, cap).astype(np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(cnt, out=offsets[1:])
    if with_indices:
        seed = stream.master_seed

        def chunk(lo_hi):
            lo, hi = lo_hi
            uu = uniforms_multi(seed, sids[lo:hi], 2, cnt[lo:hi])
            return kernels.sample_distinct(cnt[lo:hi], limit, uu)

        workers = max(1, int(workers))
        nchunks = min(n, workers * 4) if workers > 1 else 1
        edges = np.linspace(0, n, nchunks + 1).astype(np.int64)
        spans = list(zip(edges[:-1].tolist(), edges[1:].tolist()))
        if nchunks == 1:
            parts = [chunk(spans[0])]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(chunk, spans))
        inds = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    else:
        inds = np.zeros(0, dtype=np.int64)
    return DistributeResult(cnt, inds, offsets, branch, ratio, scaled, int(over.sum()), floored)
