"""Command-line front end: extract, generate, roundtrip, bench, compare.

Exit codes: 0 success, 1 input/output or format problem, 2 infeasible or
unsupported request, 3 feature mismatch.  Results go to stdout (or ``-o``),
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import kernels
from .errors import (
    CapacityError,
    DomainError,
    EmptySpecError,
    FormatError,
    GroupingMemoryError,
    IncompleteFeatureError,
    InfeasibleSpecError,
    ParseError,
    UnsupportedCombination,
    UnsupportedOrderError,
)
from .extraction import (
    DEFAULT_LAMBDA,
    GROUP_WORD_CAP,
    METHODS,
    MethodChoice,
    build_counts_group,
    build_counts_hash,
    build_counts_hybrid,
    build_counts_sort,
    decision_metric,
    extract,
    mode_order_set,
    project,
    select_top3_modes,
)
from .features import (
    ALL_MODES,
    FIB_PER_SLICE,
    NZ_PER_FIBER,
    NZ_PER_SLICE,
    compare,
    deserialize,
    serialize,
)
from .generator import GeneratorSpec, generate_with_report, spec_from_features
from .tensor import load_frostt, write_frostt

EXIT_OK = 0
EXIT_IO = 1
EXIT_INFEASIBLE = 2
EXIT_MISMATCH = 3

GREEN = (0.9, 1.1)
RED_LOW, RED_HIGH = 0.5, 2.0
# below this original cv the ratio is not meaningful and is omitted
CV_RATIO_FLOOR = 0.1


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _float_list(text: str) -> List[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


def _int_list(text) -> List[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).replace("x", ",").split(",") if x.strip()]


def load_config(path: str) -> Dict[str, object]:
    """Read a JSON object or ``key = value`` lines; keys use flag spelling with ``-`` or ``_``."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise FormatError("config JSON must be an object")
    except json.JSONDecodeError:
        doc = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError("expected key = value", lineno)
            k, v = (p.strip() for p in line.split("=", 1))
            doc[k] = v
    return {k.lstrip("-").replace("-", "_"): v for k, v in doc.items()}


def _add_common(p: argparse.ArgumentParser, methods=True):
    p.add_argument("--config", help="JSON or key=value file mirroring the flags (flags win)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads (default: all cores)")
    p.add_argument("-o", "--output", help="output path (default: stdout)")
    p.add_argument("--no-timing", dest="timing", action="store_false",
                   help="omit wall-clock fields so reruns are byte-identical")
    if methods:
        p.add_argument("--method", choices=METHODS, default="hybrid")
        p.add_argument("--modes", dest="scope", choices=["all", "top3", "all_modes", "only_3_mode"], default="top3")
        p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA,
                       help="hybrid threshold on the two leading mode sizes' product")
        p.add_argument("--group-cap", type=int, default=GROUP_WORD_CAP,
                       help="scratch words the grouping method may use before falling back to sorting")


def _add_spec_flags(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", type=_int_list, default=None, help="mode sizes, e.g. 100,100,100")
    for flag in ("--d-slc", "--d-fib", "--d-nz"):
        p.add_argument(flag, type=float, default=None)
    for flag in ("--cv-fib", "--cv-nz", "--imbal-fib", "--imbal-nz"):
        p.add_argument(flag, type=float, default=None)
    p.add_argument("--window", type=_float_list, default=None, help="scaling window lo,hi (default 0.95,1.05)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tensorfeat", description="Sparse tensor feature extraction and generation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="extract features from a .tns file")
    p.add_argument("input")
    _add_common(p)
    p.add_argument("--format", choices=["json", "csv"], default=None)
    p.add_argument("--duplicates", choices=["reject", "sum"], default="reject")

    p = sub.add_parser("generate", help="generate a .tns tensor from target features")
    _add_common(p, methods=False)
    _add_spec_flags(p)
    p.add_argument("--format", choices=["tns"], default="tns")

    p = sub.add_parser("roundtrip", help="extract, generate from the features, re-extract and compare")
    p.add_argument("input")
    _add_common(p)
    _add_spec_flags(p)
    p.add_argument("--save-generated", help="also write the generated tensor here")

    p = sub.add_parser("bench", help="time extraction methods per mode order")
    p.add_argument("inputs", nargs="+")
    _add_common(p)
    p.add_argument("--methods", default=",".join(METHODS), help="comma-separated methods to time")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--backend", choices=["auto", "python", "compiled"], default="auto")

    p = sub.add_parser("compare", help="compare two feature files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--rtol", type=float, default=1e-12)
    p.add_argument("-o", "--output", help="write the diff listing here")
    p.add_argument("--config")
    return parser


def _parse(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if getattr(ns, "config", None):
        cfg = load_config(ns.config)
        sub = parser._subparsers._group_actions[0].choices[ns.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in cfg.items():
            key = {"modes": "scope", "lambda": "lam", "no_timing": "timing"}.get(k, k)
            if key not in known:
                raise _UsageError(f"unknown config key {k!r}")
            act = known[key]
            try:
                if key == "timing":
                    v = not _truthy(v) if k == "no_timing" else _truthy(v)
                elif act.type is not None and not isinstance(v, (list, tuple)):
                    v = act.type(v)
                elif act.type is not None:
                    v = act.type(",".join(map(str, v)))
            except (TypeError, ValueError):
                raise _UsageError(f"config {k}={v!r}: bad value") from None
            if act.choices is not None and v not in act.choices:
                raise _UsageError(f"config {k}={v!r}: expected one of {list(act.choices)}")
            defaults[key] = v
        sub.set_defaults(**defaults)
        ns = parser.parse_args(argv)
    return ns


def _truthy(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


def _write(data: bytes, output: Optional[str]) -> None:
    if output is None or output == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(output).write_bytes(data)


def _fmt_for(path: Optional[str], explicit: Optional[str]) -> str:
    if explicit:
        return explicit
    return "csv" if path and path.endswith(".csv") else "json"


def _workers(ns) -> int:
    w = int(ns.threads)
    if w < 1:
        raise DomainError("--threads must be at least 1")
    return w


# -- commands ----------------------------------------------------------------

def cmd_extract(ns) -> int:
    workers = _workers(ns)
    if ns.output:
        _check_writable(ns.output)
    t = load_frostt(ns.input, duplicates=ns.duplicates)
    fs = extract(t, MethodChoice(ns.method, ns.scope, ns.lam), workers=workers, group_cap=ns.group_cap)
    for note in fs.meta.get("fallbacks", []):
        _err(f"note: grouping fell back to sorting ({note})")
    _write(serialize(fs, _fmt_for(ns.output, ns.format), include_timing=ns.timing), ns.output)
    return EXIT_OK


def _spec_from_flags(ns, base: Optional[GeneratorSpec] = None) -> GeneratorSpec:
    names = {
        "d_slc": "d_slc", "d_fib": "d_fib", "d_nz": "d_nz",
        "cv_fib": "cv_fib", "cv_nz": "cv_nz", "imbal_fib": "imbal_fib", "imbal_nz": "imbal_nz",
    }
    vals = {}
    for flag, key in names.items():
        v = getattr(ns, flag)
        if v is not None:
            vals[key] = v
        elif base is not None:
            vals[key] = getattr(base, key)
    dims = ns.dims if ns.dims is not None else (base.dims if base is not None else None)
    missing = [k for k in ("d_slc", "d_fib", "d_nz") if k not in vals]
    if dims is None or missing:
        raise _UsageError(f"generate needs --dims and {', '.join('--' + k.replace('_', '-') for k in missing) or 'densities'}")
    if base is not None and len(dims) != base.order:
        raise DomainError(f"--dims has {len(dims)} modes but the tensor has {base.order}")
    window = tuple(ns.window) if ns.window else (base.window if base else (0.95, 1.05))
    if len(window) != 2:
        raise _UsageError("--window takes lo,hi")
    return GeneratorSpec(dims=tuple(dims), seed=ns.seed, window=window, **vals)


def cmd_generate(ns) -> int:
    workers = _workers(ns)
    spec = _spec_from_flags(ns)
    if ns.output:
        _check_writable(ns.output)
    t, report = generate_with_report(spec, workers=workers)
    buf = io.BytesIO()
    write_frostt(t, buf)
    summary = {"nnz": report.nnz, "nslc": report.nslc, "nfib": report.nfib}
    summary.update(report.to_dict(include_timing=ns.timing))
    summary["spec"] = spec.to_dict()
    if ns.output is None or ns.output == "-":
        _write(buf.getvalue(), None)
        _err(json.dumps(summary, sort_keys=True))
    else:
        Path(ns.output).write_bytes(buf.getvalue())
        print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def ratio_label(ratio: Optional[float]) -> str:
    if ratio is None:
        return "-"
    if GREEN[0] <= ratio <= GREEN[1]:
        return "green"
    if ratio < RED_LOW or ratio > RED_HIGH:
        return "red"
    return "orange"


def _spec_features(fs) -> Dict[str, float]:
    m = len(fs.global_features.sizes)
    pair = (m - 1, m)
    fps = fs.block(FIB_PER_SLICE, pair)
    npf = fs.block(NZ_PER_FIBER, (m,))
    return {
        "nnz": fs.global_features.nnz,
        "d_nz": fs.global_features.d_nz,
        "d_slc": fs.block(NZ_PER_SLICE, pair).nz_density,
        "d_fib": npf.nz_density,
        "cv_fib": fps.cv_nz,
        "cv_nz": npf.cv_nz,
        "imbal_fib": fps.imbal_nz,
        "imbal_nz": npf.imbal_nz,
    }


def roundtrip_rows(original, generated) -> List[tuple]:
    """``(feature, original, generated, ratio_text, label)`` rows for the round-trip table."""
    a, b = _spec_features(original), _spec_features(generated)
    rows = []
    for name in a:
        x, y = a[name], b[name]
        if name.startswith("cv") and x < CV_RATIO_FLOOR:
            ratio = None
        elif x == 0:
            ratio = None if y == 0 else math.inf
        else:
            ratio = y / x
        rows.append((name, x, y, "-" if ratio is None else format(ratio, ".6f"), ratio_label(ratio)))
    return rows


def cmd_roundtrip(ns) -> int:
    workers = _workers(ns)
    t = load_frostt(ns.input)
    # spec inputs need the mode-(M-1, M) blocks, which top-3 scope may skip above order 3
    choice = MethodChoice(ns.method if t.order == 3 else "hash", ALL_MODES, ns.lam)
    fs = extract(t, choice, workers=workers, group_cap=ns.group_cap)
    spec = spec_from_features(fs, seed=ns.seed)
    if any(getattr(ns, k) is not None for k in ("dims", "d_slc", "d_fib", "d_nz", "cv_fib", "cv_nz", "imbal_fib", "imbal_nz", "window")):
        spec = _spec_from_flags(ns, base=spec)
    g, report = generate_with_report(spec, workers=workers)
    if ns.save_generated:
        write_frostt(g, ns.save_generated)
    fg = extract(g, choice, workers=workers, group_cap=ns.group_cap)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "original", "generated", "ratio", "label"])
    for name, x, y, r, lab in roundtrip_rows(fs, fg):
        w.writerow([name, _num_text(x), _num_text(y), r, lab])
    _write(buf.getvalue().encode(), ns.output)
    _err(json.dumps({"clamped_fib": report.clamped_fib, "clamped_nz": report.clamped_nz,
                     "scaled_fib": report.scaled_fib, "scaled_nz": report.scaled_nz}, sort_keys=True))
    return EXIT_OK


def _num_text(x) -> str:
    return str(x) if isinstance(x, int) else format(float(x), ".16e")


def _time_it(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def bench_rows(paths: Sequence[str], methods: Sequence[str], reps: int, lam: float,
               scope: str, workers: int, group_cap: int, timing: bool = True) -> List[List[str]]:
    """Per-method, per-mode timings; preprocessing (projection) is inside each timed call."""
    reps = max(1, int(reps))
    header = ["tensor", "method", "fiber_mode", "metric", "path"]
    if timing:
        header += [f"time_{i + 1}" for i in range(reps)] + (["time_mean"] if reps > 1 else [])
    rows = [header]
    for path in paths:
        t = load_frostt(path)
        modes = tuple(sorted(select_top3_modes(t)))
        name = Path(path).name
        for method in methods:
            if method == "hash":
                covered = modes if MethodChoice("hash", scope).scope != ALL_MODES else None
                jobs = [("all", "", "hash", lambda: build_counts_hash(t, covered, workers=workers))]
            else:
                jobs = []
                for mo in mode_order_set(3):
                    fmode = modes[mo.perm[-1] - 1]

                    def job(mo=mo, method=method):
                        v = project(t, modes)
                        if method == "sort":
                            return build_counts_sort(v, mo)
                        if method == "group":
                            return build_counts_group(v, mo, cap=group_cap)
                        return build_counts_hybrid(v, mo, lam, cap=group_cap)

                    metric = decision_metric(project(t, modes).dims, mo)
                    if method == "hybrid":
                        kind = "group" if metric < lam else "sort"
                    else:
                        kind = method
                    jobs.append((str(fmode), str(metric), kind, job))
            for fmode, metric, kind, fn in jobs:
                row = [name, method, fmode, metric, kind]
                try:
                    times = [_time_it(fn) for _ in range(reps)]
                except (GroupingMemoryError, MemoryError) as e:
                    row[4] = f"failed: {type(e).__name__}"
                    times = None
                if timing:
                    if times is None:
                        row += [""] * (reps + (1 if reps > 1 else 0))
                    else:
                        row += [format(x, ".6f") for x in times]
                        if reps > 1:
                            row.append(format(sum(times) / reps, ".6f"))
                rows.append(row)
    return rows


def cmd_bench(ns) -> int:
    workers = _workers(ns)
    methods = [m.strip() for m in ns.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise _UsageError(f"unknown methods {bad}")
    if ns.backend != "auto" and ns.backend not in kernels.available():
        raise _UsageError(f"kernel backend {ns.backend!r} is not available (have {kernels.available()})")
    with kernels.use_backend(ns.backend):
        rows = bench_rows(ns.inputs, methods, ns.reps, ns.lam, ns.scope, workers, ns.group_cap, ns.timing)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    _write(buf.getvalue().encode(), ns.output)
    return EXIT_OK


def _read_features(path: str):
    data = Path(path).read_bytes()
    return deserialize(data, "csv" if path.endswith(".csv") else "json")


def cmd_compare(ns) -> int:
    a, b = _read_features(ns.a), _read_features(ns.b)
    diffs = compare(a, b, rtol=ns.rtol)
    if not diffs:
        return EXIT_OK
    lines = [f"{n}\t{k}\t{m}\t{x}\t{y}" for (n, k, m), x, y in diffs]
    text = "feature\tkind\tmodes\ta\tb\n" + "\n".join(lines) + "\n"
    _write(text.encode(), ns.output)
    return EXIT_MISMATCH


def _check_writable(path: str) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory {parent} does not exist")


COMMANDS = {
    "extract": cmd_extract,
    "generate": cmd_generate,
    "roundtrip": cmd_roundtrip,
    "bench": cmd_bench,
    "compare": cmd_compare,
}

_INFEASIBLE = (
    UnsupportedCombination,
    UnsupportedOrderError,
    InfeasibleSpecError,
    EmptySpecError,
    IncompleteFeatureError,
    CapacityError,
    DomainError,
)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = _parse(argv)
        return COMMANDS[ns.command](ns)
    except _UsageError as e:
        _err(str(e))
        return EXIT_IO
    except _INFEASIBLE as e:
        _err(f"error: {type(e).__name__}: {e}")
        return EXIT_INFEASIBLE
    except (FormatError, ParseError, OSError, UnicodeDecodeError) as e:
        _err(f"error: {type(e).__name__}: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
