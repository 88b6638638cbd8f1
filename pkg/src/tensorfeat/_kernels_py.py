"""Pure-Python/numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable, and as the
cross-check for it.  Every function here has the same signature and returns
the same values as its compiled twin; only the hash tally may list its unique
keys in a different order.
"""

import numpy as np

NAME = "python"


def group_counts(slc, fib, n_slc, n_fib):
    """Grouping-based count construction for one mode order.

    Parameters
    ----------
    slc, fib : int64 arrays
        0-based slice and fiber-position index of every nonzero.
    n_slc, n_fib : int
        Extents of the slice and fiber-position index ranges.

    Returns
    -------
    (n_nz_slc, ind_slc, n_fib_slc, n_nz_fib, aux_words)
    """
    slc = np.asarray(slc, dtype=np.int64)
    fib = np.asarray(fib, dtype=np.int64)
    nnz = slc.shape[0]
    cnt1 = np.bincount(slc, minlength=n_slc)
    ind_slc = np.flatnonzero(cnt1)
    n_nz_slc = cnt1[ind_slc].astype(np.int64)
    nslc = ind_slc.shape[0]
    loc_len = int(ind_slc[-1]) + 1 if nslc else 0
    # stable bucketing by slice, same result as the loc/order counting pass
    order = np.argsort(slc, kind="stable")
    slice_rank = np.repeat(np.arange(nslc, dtype=np.int64), n_nz_slc)
    f = fib[order]
    within = np.lexsort((f, slice_rank))
    f = f[within]
    r = slice_rank[within]
    if nnz:
        new_fib = np.empty(nnz, dtype=bool)
        new_fib[0] = True
        new_fib[1:] = (f[1:] != f[:-1]) | (r[1:] != r[:-1])
        starts = np.flatnonzero(new_fib)
        n_nz_fib = np.diff(np.append(starts, nnz)).astype(np.int64)
        n_fib_slc = np.bincount(r[starts], minlength=nslc).astype(np.int64)
    else:
        n_nz_fib = np.zeros(0, dtype=np.int64)
        n_fib_slc = np.zeros(0, dtype=np.int64)
    aux_words = n_slc + loc_len + (nslc + 1) + nnz + n_fib
    return n_nz_slc, ind_slc.astype(np.int64), n_fib_slc, n_nz_fib, int(aux_words)


def sorted_run_counts(cols):
    """Scan a sorted permuted index matrix into count arrays.

    ``cols`` has shape (M, NNZ) and is lexicographically sorted by its rows
    taken in order.  A slice run breaks when any of the first M-2 rows
    changes, a fiber run when any of the first M-1 rows changes.
    """
    cols = np.asarray(cols)
    m, nnz = cols.shape
    if nnz == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z.copy(), z.copy()
    slc_change = np.zeros(nnz, dtype=bool)
    slc_change[0] = True
    for r in range(m - 2):
        slc_change[1:] |= cols[r, 1:] != cols[r, :-1]
    fib_change = slc_change.copy()
    fib_change[1:] |= cols[m - 2, 1:] != cols[m - 2, :-1]
    slc_starts = np.flatnonzero(slc_change)
    fib_starts = np.flatnonzero(fib_change)
    n_nz_slc = np.diff(np.append(slc_starts, nnz)).astype(np.int64)
    n_nz_fib = np.diff(np.append(fib_starts, nnz)).astype(np.int64)
    slice_of_fiber = np.cumsum(slc_change)[fib_starts] - 1
    n_fib_slc = np.bincount(slice_of_fiber, minlength=slc_starts.shape[0]).astype(np.int64)
    return n_nz_slc, n_fib_slc, n_nz_fib


def hash_tally(keys):
    """Count occurrences of each packed key row.

    ``keys`` is a uint64 array of shape (NNZ, K).  Returns the unique key
    rows, their counts and the position of the first occurrence of each.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    n, k = keys.shape
    table = {}
    if k == 1:
        it = keys[:, 0].tolist()
    else:
        it = map(tuple, keys.tolist())
    for pos, key in enumerate(it):
        slot = table.get(key)
        if slot is None:
            table[key] = [1, pos]
        else:
            slot[0] += 1
    u = len(table)
    counts = np.empty(u, dtype=np.int64)
    first = np.empty(u, dtype=np.int64)
    for i, (c, p) in enumerate(table.values()):
        counts[i] = c
        first[i] = p
    uniq = keys[first] if u else np.zeros((0, k), dtype=np.uint64)
    return uniq, counts, first


def sample_distinct(counts, limit, u):
    """Draw ``counts[i]`` distinct indices in [1, limit] for every entity.

    ``u`` holds the uniforms in (0, 1) for all entities back to back, one per
    drawn index.  Floyd's algorithm is used while counts[i]/limit <= 0.5,
    a partial Fisher-Yates shuffle otherwise.  Each entity's indices come
    back sorted ascending.
    """
    counts = np.asarray(counts, dtype=np.int64)
    u = np.asarray(u, dtype=np.float64)
    out = np.empty(int(counts.sum()), dtype=np.int64)
    limit = int(limit)
    pos = 0
    for c in counts.tolist():
        if c == 0:
            continue
        draws = u[pos:pos + c].tolist()
        if 2 * c <= limit:
            chosen = set()
            base = limit - c
            for step, x in enumerate(draws):
                j = base + step + 1
                t = int(x * j)
                if t >= j:
                    t = j - 1
                t += 1
                if t in chosen:
                    chosen.add(j)
                else:
                    chosen.add(t)
            picked = sorted(chosen)
        else:
            perm = list(range(1, limit + 1))
            for i, x in enumerate(draws):
                span = limit - i
                t = int(x * span)
                if t >= span:
                    t = span - 1
                j = i + t
                perm[i], perm[j] = perm[j], perm[i]
            picked = sorted(perm[:c])
        out[pos:pos + c] = picked
        pos += c
    return out
