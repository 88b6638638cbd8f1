"""Kernel backend selection.

The compiled extension is preferred; set ``TENSORFEAT_BACKEND=python`` to
force the numpy fallback.  ``use_backend`` switches at runtime (benchmarks,
cross-checks).
"""

import contextlib
import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled


def available():
    return sorted(_BACKENDS)


def _initial():
    want = os.environ.get("TENSORFEAT_BACKEND", "auto")
    if want == "auto":
        return _compiled or _kernels_py
    if want not in _BACKENDS:
        raise ImportError(f"kernel backend {want!r} is not available")
    return _BACKENDS[want]


_active = _initial()


def active():
    return _active.NAME


def get(name=None):
    return _active if name is None else _BACKENDS[name]


@contextlib.contextmanager
def use_backend(name):
    global _active
    if name == "auto":
        name = (_compiled or _kernels_py).NAME
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} is not available (have {available()})")
    prev = _active
    _active = _BACKENDS[name]
    try:
        yield _active
    finally:
        _active = prev


def group_counts(slc, fib, n_slc, n_fib):
    return _active.group_counts(slc, fib, n_slc, n_fib)


def sorted_run_counts(cols):
    return _active.sorted_run_counts(cols)


def hash_tally(keys):
    return _active.hash_tally(keys)


def sample_distinct(counts, limit, u):
    return _active.sample_distinct(counts, limit, u)
