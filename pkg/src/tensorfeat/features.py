"""Feature vocabulary, final reduction from count arrays, and (de)serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, fields
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from .errors import EmptyDomainError, NonPositiveCountError, ParseError, UnsupportedOrderError

NZ_PER_SLICE = "nz_per_slice"
NZ_PER_FIBER = "nz_per_fiber"
FIB_PER_SLICE = "fib_per_slice"
KINDS = (NZ_PER_SLICE, NZ_PER_FIBER, FIB_PER_SLICE)

ALL_MODES = "all_modes"
ONLY_3_MODE = "only_3_mode"
_SCOPE_ALIASES = {"all": ALL_MODES, "all_modes": ALL_MODES, "top3": ONLY_3_MODE, "only_3_mode": ONLY_3_MODE}

GLOBAL_SCALARS = ("nnz", "d_nz", "nfib_all", "nslc_all", "nfib_nz", "nslc_nz", "d_fib", "d_slc")
N_SIZE_FEATURES = 3
_GLOBAL_INTS = {"nnz", "nfib_all", "nslc_all", "nfib_nz", "nslc_nz"}


def largest_modes(dims: Sequence[int], k: int = 3) -> Tuple[int, ...]:
    """The ``k`` largest modes (1-based), largest first; ties go to the lower mode."""
    ranked = sorted(range(len(dims)), key=lambda m: (-dims[m], m))
    return tuple(m + 1 for m in ranked[:k])


def size_feature_modes(dims: Sequence[int]) -> Tuple[int, ...]:
    """Modes whose sizes are reported as features: the three largest, ascending.

    The global block always has eleven scalars (three sizes plus eight
    others); the full shape of higher-order tensors travels as metadata.
    """
    return tuple(sorted(largest_modes(dims, 3)))


def normalize_scope(scope: str) -> str:
    try:
        return _SCOPE_ALIASES[scope]
    except KeyError:
        raise ValueError(f"unknown scope {scope!r}; expected all_modes or only_3_mode") from None


@dataclass(frozen=True)
class KindStats:
    """The fifteen statistics of one (kind, mode) block."""

    n_all: int
    n_nz: int
    nz_density: float
    max: int
    min: int
    dev: int
    sum: int
    avg_all: float
    imbal_all: float
    stdev_all: float
    cv_all: float
    avg_nz: float
    imbal_nz: float
    stdev_nz: float
    cv_nz: float


STAT_NAMES = tuple(f.name for f in fields(KindStats))
_STAT_INTS = {"n_all", "n_nz", "max", "min", "dev", "sum"}


@dataclass(frozen=True)
class GlobalFeatures:
    sizes: Tuple[int, ...]
    nnz: int
    d_nz: float
    nfib_all: int
    nslc_all: int
    nfib_nz: int
    nslc_nz: int
    d_fib: float
    d_slc: float


@dataclass
class FeatureSet:
    """Global features plus every (kind, modes) block.

    ``blocks`` is keyed by ``(kind, modes)`` where ``modes`` is ``(m,)`` for
    fiber blocks and the sorted pair ``(k, l)`` for slice blocks.
    """

    global_features: GlobalFeatures
    blocks: Dict[Tuple[str, Tuple[int, ...]], KindStats]
    meta: dict = field(default_factory=dict)

    def block(self, kind: str, modes) -> KindStats:
        return self.blocks[(kind, tuple(modes))]

    def sorted_blocks(self):
        return sorted(self.blocks.items(), key=lambda kv: (KINDS.index(kv[0][0]), kv[0][1]))

    def items(self):
        """Every scalar feature as ``(name, kind, modes, value)`` in serialization order."""
        g = self.global_features
        out = [("size", "global", str(m), g.sizes[m - 1]) for m in size_feature_modes(g.sizes)]
        out += [(name, "global", "", getattr(g, name)) for name in GLOBAL_SCALARS]
        for (kind, modes), st in self.sorted_blocks():
            tag = modes_tag(modes)
            out += [(name, kind, tag, getattr(st, name)) for name in STAT_NAMES]
        return out

    def __len__(self):
        return N_SIZE_FEATURES + len(GLOBAL_SCALARS) + 15 * len(self.blocks)


def modes_tag(modes) -> str:
    return "-".join(str(m) for m in modes)


def parse_modes_tag(tag: str) -> Tuple[int, ...]:
    try:
        modes = tuple(int(p) for p in tag.split("-"))
    except ValueError:
        raise ParseError(f"bad mode identifier {tag!r}") from None
    if len(modes) not in (1, 2) or (len(modes) == 2 and modes[0] >= modes[1]):
        raise ParseError(f"bad mode identifier {tag!r}")
    return modes


def _int_sums(counts: np.ndarray):
    if counts.size == 0:
        return 0, 0
    top = int(counts.max())
    if top * counts.size < 2**62 and top * top * counts.size < 2**62:
        return int(counts.sum(dtype=np.int64)), int(np.dot(counts, counts))
    vals = counts.tolist()
    return sum(vals), sum(v * v for v in vals)


def compute_kind_stats(counts, n_all: int) -> KindStats:
    """Reduce the per-entry counts of the nonzero entries of one block.

    ``counts`` lists the count of every nonzero entry; the ``n_all - len(counts)``
    empty entries count as zeros for the ``*_all`` statistics.  Standard
    deviations are population deviations; ``min`` ranges over nonzero entries
    only.  All aggregates are exact integers, so results do not depend on the
    order of ``counts``.
    """
    n_all = int(n_all)
    if n_all <= 0:
        raise EmptyDomainError("a block needs at least one entry")
    counts = np.asarray(counts, dtype=np.int64).ravel()
    n_nz = int(counts.size)
    if n_nz > n_all:
        raise ValueError(f"{n_nz} nonzero entries exceed n_all={n_all}")
    if n_nz == 0:
        return KindStats(n_all, 0, 0.0, 0, 0, 0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    if int(counts.min()) <= 0:
        raise NonPositiveCountError("every listed entry must have a positive count")
    s1, s2 = _int_sums(counts)
    cmax = int(counts.max())
    cmin = int(counts.min())

    def spread(n):
        avg = s1 / n
        imbal = (cmax * n - s1) / (cmax * n)
        stdev = math.sqrt((n * s2 - s1 * s1) / (n * n))
        return avg, imbal, stdev, stdev / avg

    avg_all, imbal_all, sd_all, cv_all = spread(n_all)
    avg_nz, imbal_nz, sd_nz, cv_nz = spread(n_nz)
    return KindStats(
        n_all, n_nz, n_nz / n_all, cmax, cmin, cmax - cmin, s1,
        avg_all, imbal_all, sd_all, cv_all, avg_nz, imbal_nz, sd_nz, cv_nz,
    )


def fiber_n_all(dims: Sequence[int], mode: int, covered: Sequence[int]) -> int:
    """Number of mode-``mode`` fibers among the ``covered`` modes (1-based)."""
    return math.prod(dims[j - 1] for j in covered if j != mode)


def slice_n_all(dims: Sequence[int], pair, covered: Sequence[int]) -> int:
    return math.prod(dims[j - 1] for j in covered if j not in pair)


def compute_global(
    dims: Sequence[int],
    nnz: int,
    fiber_nz: Mapping[int, int],
    slice_nz: Mapping[Tuple[int, int], int],
) -> GlobalFeatures:
    """Table-1 style global features.

    ``fiber_nz`` maps each covered fiber mode to its number of nonzero fibers,
    ``slice_nz`` each covered slice pair to its number of nonzero slices.  The
    fiber and slice totals range over the covered modes; ``d_nz`` always uses
    every mode size.
    """
    covered = sorted(set(fiber_nz) | {m for p in slice_nz for m in p})
    nfib_all = sum(fiber_n_all(dims, m, covered) for m in fiber_nz)
    nslc_all = sum(slice_n_all(dims, p, covered) for p in slice_nz)
    nfib_nz = int(sum(fiber_nz.values()))
    nslc_nz = int(sum(slice_nz.values()))
    return GlobalFeatures(
        tuple(int(d) for d in dims),
        int(nnz),
        nnz / math.prod(dims),
        nfib_all,
        nslc_all,
        nfib_nz,
        nslc_nz,
        nfib_nz / nfib_all if nfib_all else 0.0,
        nslc_nz / nslc_all if nslc_all else 0.0,
    )


def feature_count(order: int, scope: str = ALL_MODES) -> int:
    """Scalar features produced for an order-``order`` tensor in ``scope``."""
    if order < 3:
        raise UnsupportedOrderError(f"order {order} < 3 is not supported")
    covered = order if normalize_scope(scope) == ALL_MODES else 3
    return 15 * (2 * math.comb(covered, 2) + covered) + N_SIZE_FEATURES + len(GLOBAL_SCALARS)


# -- serialization -----------------------------------------------------------

def _fmt_float(x: float) -> str:
    return format(float(x), ".16e")


def _dump(obj, out):
    if isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(", ")
            out.append(json.dumps(str(k)))
            out.append(": ")
            _dump(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(", ")
            _dump(v, out)
        out.append("]")
    elif isinstance(obj, bool) or obj is None or isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(obj))
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def _json_doc(fs: FeatureSet, include_timing: bool) -> dict:
    g = fs.global_features
    glob = {"sizes": {str(m): g.sizes[m - 1] for m in size_feature_modes(g.sizes)}}
    glob.update({name: getattr(g, name) for name in GLOBAL_SCALARS})
    blocks = [
        {"kind": kind, "modes": modes_tag(modes), "stats": {n: getattr(st, n) for n in STAT_NAMES}}
        for (kind, modes), st in fs.sorted_blocks()
    ]
    meta = dict(fs.meta)
    meta["dims"] = list(g.sizes)
    if not include_timing:
        meta.pop("wall_time_s", None)
        meta.pop("workers", None)
    return {"global": glob, "blocks": blocks, "meta": meta}


def serialize(fs: FeatureSet, fmt: str = "json", include_timing: bool = True) -> bytes:
    """Encode a feature set as JSON or CSV bytes.

    Floats carry 17 significant digits.  ``include_timing=False`` drops the
    run-dependent wall time and worker count from the JSON metadata so that
    repeated runs are byte-identical.  CSV holds one row per scalar feature
    and no metadata.
    """
    if fmt == "json":
        out = []
        _dump(_json_doc(fs, include_timing), out)
        return ("".join(out) + "\n").encode("utf-8")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        buf.write("# dims " + " ".join(map(str, fs.global_features.sizes)) + "\n")
        w.writerow(["feature_name", "kind", "modes", "value"])
        for name, kind, modes, value in fs.items():
            w.writerow([name, kind, modes, _fmt_float(value) if isinstance(value, float) else int(value)])
        return buf.getvalue().encode("utf-8")
    raise ValueError(f"unknown feature format {fmt!r}")


def _as_int(v, what):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"{what} must be an integer, got {v!r}")
    return v


def _as_float(v, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{what} must be a number, got {v!r}")
    return float(v)


def _stats_from(d: Mapping, where: str) -> KindStats:
    if set(d) != set(STAT_NAMES):
        raise ParseError(f"{where}: expected stats {STAT_NAMES}, got {sorted(d)}")
    vals = {
        n: (_as_int(d[n], f"{where}.{n}") if n in _STAT_INTS else _as_float(d[n], f"{where}.{n}"))
        for n in STAT_NAMES
    }
    return KindStats(**vals)


def _global_from(d: Mapping, dims) -> GlobalFeatures:
    expect = {"sizes", *GLOBAL_SCALARS}
    if set(d) != expect:
        raise ParseError(f"global: expected keys {sorted(expect)}, got {sorted(d)}")
    sizes = d["sizes"]
    if not isinstance(sizes, dict):
        raise ParseError("global.sizes must map mode numbers to sizes")
    try:
        sizes = {int(k): _as_int(v, "size") for k, v in sizes.items()}
    except ValueError:
        raise ParseError(f"bad mode number in global.sizes: {sorted(sizes)}") from None
    if dims is None:
        if sorted(sizes) != [1, 2, 3]:
            raise ParseError("tensor dims missing; sizes alone only describe a 3-mode tensor")
        dims = [sizes[m] for m in (1, 2, 3)]
    if not isinstance(dims, list) or len(dims) < 3:
        raise ParseError("dims must list at least three sizes")
    dims = tuple(_as_int(x, "dim") for x in dims)
    if any(x < 1 for x in dims):
        raise ParseError("dims must be positive")
    if set(sizes) != set(size_feature_modes(dims)) or any(dims[m - 1] != v for m, v in sizes.items()):
        raise ParseError("size features disagree with the tensor dims")
    vals = {
        n: (_as_int(d[n], n) if n in _GLOBAL_INTS else _as_float(d[n], n)) for n in GLOBAL_SCALARS
    }
    return GlobalFeatures(dims, **vals)


def _check_kind(kind, modes):
    if kind not in KINDS:
        raise ParseError(f"unknown kind {kind!r}")
    want = 1 if kind == NZ_PER_FIBER else 2
    if len(modes) != want:
        raise ParseError(f"kind {kind} needs {want} mode(s), got {modes_tag(modes)}")


def deserialize(data, fmt: str = "json") -> FeatureSet:
    """Inverse of :func:`serialize`; raises :class:`ParseError` on malformed input."""
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(str(e)) from None
    if fmt == "json":
        return _from_json(data)
    if fmt == "csv":
        return _from_csv(data)
    raise ValueError(f"unknown feature format {fmt!r}")


def _from_json(text: str) -> FeatureSet:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e}") from None
    if not isinstance(doc, dict) or set(doc) - {"global", "blocks", "meta"} or "global" not in doc:
        raise ParseError("expected an object with global, blocks and meta")
    meta = doc.get("meta", {})
    if not isinstance(meta, dict):
        raise ParseError("meta must be an object")
    if not isinstance(doc["global"], dict):
        raise ParseError("global must be an object")
    glob = _global_from(doc["global"], meta.pop("dims", None))
    blocks = {}
    raw_blocks = doc.get("blocks", [])
    if not isinstance(raw_blocks, list):
        raise ParseError("blocks must be a list")
    for b in raw_blocks:
        if not isinstance(b, dict) or set(b) != {"kind", "modes", "stats"}:
            raise ParseError(f"malformed block {b!r}")
        modes = parse_modes_tag(str(b["modes"]))
        _check_kind(b["kind"], modes)
        key = (b["kind"], modes)
        if key in blocks:
            raise ParseError(f"duplicate block {b['kind']}:{b['modes']}")
        blocks[key] = _stats_from(b["stats"], f"{b['kind']}:{b['modes']}")
    return FeatureSet(glob, blocks, meta)


def _num(tok: str):
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"bad numeric value {tok!r}") from None


def _from_csv(text: str) -> FeatureSet:
    lines = text.splitlines()
    dims = None
    if lines and lines[0].startswith("# dims"):
        try:
            dims = [int(x) for x in lines[0].split()[2:]]
        except ValueError:
            raise ParseError(f"bad dims line {lines[0]!r}") from None
        lines = lines[1:]
    rows = list(csv.reader(lines))
    if not rows or rows[0] != ["feature_name", "kind", "modes", "value"]:
        raise ParseError("missing CSV header feature_name,kind,modes,value")
    sizes = {}
    glob = {}
    stats: Dict[Tuple[str, Tuple[int, ...]], dict] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise ParseError(f"line {lineno}: expected 4 fields")
        name, kind, modes, tok = row
        value = _num(tok)
        if kind == "global":
            if name == "size":
                sizes[modes] = value
            elif name in GLOBAL_SCALARS:
                glob[name] = value
            else:
                raise ParseError(f"line {lineno}: unknown global feature {name!r}")
            continue
        m = parse_modes_tag(modes)
        _check_kind(kind, m)
        if name not in STAT_NAMES:
            raise ParseError(f"line {lineno}: unknown statistic {name!r}")
        stats.setdefault((kind, m), {})[name] = value
    glob["sizes"] = sizes
    g = _global_from(glob, dims)
    blocks = {k: _stats_from(v, f"{k[0]}:{modes_tag(k[1])}") for k, v in stats.items()}
    return FeatureSet(g, blocks, {})


def compare(a: FeatureSet, b: FeatureSet, rtol: float = 1e-12):
    """List differences: integer features must match exactly, reals within ``rtol``."""
    diffs = []
    ia = {(n, k, m): v for n, k, m, v in a.items()}
    ib = {(n, k, m): v for n, k, m, v in b.items()}
    for key in sorted(set(ia) | set(ib)):
        if key not in ia or key not in ib:
            diffs.append((key, ia.get(key), ib.get(key)))
            continue
        x, y = ia[key], ib[key]
        if isinstance(x, int) and isinstance(y, int):
            if x != y:
                diffs.append((key, x, y))
        elif not math.isclose(float(x), float(y), rel_tol=rtol, abs_tol=0.0):
            diffs.append((key, x, y))
    return diffs
