# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Mirrors ``_kernels_py`` function for function; see that module for the
contracts.  All loops run without the GIL so callers can fan blocks out
over threads.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport malloc, free, qsort
from libc.string cimport memset

cnp.import_array()

NAME = "compiled"

cdef Py_ssize_t HASH_INITIAL_BUCKETS = 100


def group_counts(slc, fib, Py_ssize_t n_slc, Py_ssize_t n_fib):
    cdef const int64_t[::1] s = np.ascontiguousarray(slc, dtype=np.int64)
    cdef const int64_t[::1] f = np.ascontiguousarray(fib, dtype=np.int64)
    cdef Py_ssize_t nnz = s.shape[0]
    cdef Py_ssize_t i, j, k, nslc = 0, loc_len = 0, nf = 0, fmin, fmax, fi
    cdef int64_t c

    cnt1_arr = np.zeros(n_slc, dtype=np.int64)
    cdef int64_t[::1] cnt1 = cnt1_arr
    with nogil:
        for k in range(nnz):
            cnt1[s[k]] += 1
        for i in range(n_slc):
            if cnt1[i] != 0:
                nslc += 1

    n_nz_slc_arr = np.empty(nslc, dtype=np.int64)
    ind_slc_arr = np.empty(nslc, dtype=np.int64)
    xn_arr = np.empty(nslc + 1, dtype=np.int64)
    cdef int64_t[::1] n_nz_slc = n_nz_slc_arr
    cdef int64_t[::1] ind_slc = ind_slc_arr
    cdef int64_t[::1] xn = xn_arr
    with nogil:
        j = 0
        xn[0] = 0
        for i in range(n_slc):
            if cnt1[i] != 0:
                n_nz_slc[j] = cnt1[i]
                ind_slc[j] = i
                xn[j + 1] = xn[j] + cnt1[i]
                j += 1
    if nslc:
        loc_len = ind_slc[nslc - 1] + 1
    loc_arr = np.empty(loc_len, dtype=np.int64)
    order_arr = np.empty(nnz, dtype=np.int64)
    cnt2_arr = np.zeros(n_fib, dtype=np.int64)
    n_fib_slc_arr = np.empty(nslc, dtype=np.int64)
    n_nz_fib_arr = np.empty(nnz, dtype=np.int64)
    cdef int64_t[::1] loc = loc_arr
    cdef int64_t[::1] order = order_arr
    cdef int64_t[::1] cnt2 = cnt2_arr
    cdef int64_t[::1] n_fib_slc = n_fib_slc_arr
    cdef int64_t[::1] n_nz_fib = n_nz_fib_arr
    with nogil:
        for i in range(nslc):
            loc[ind_slc[i]] = xn[i]
        for k in range(nnz):
            order[loc[s[k]]] = k
            loc[s[k]] += 1
        for i in range(nslc):
            fmin = n_fib
            fmax = -1
            for j in range(xn[i], xn[i + 1]):
                fi = f[order[j]]
                cnt2[fi] += 1
                if fi < fmin:
                    fmin = fi
                if fi > fmax:
                    fmax = fi
            c = 0
            for fi in range(fmin, fmax + 1):
                if cnt2[fi] != 0:
                    n_nz_fib[nf] = cnt2[fi]
                    nf += 1
                    c += 1
                    cnt2[fi] = 0
            n_fib_slc[i] = c
    aux_words = n_slc + loc_len + (nslc + 1) + nnz + n_fib
    return n_nz_slc_arr, ind_slc_arr, n_fib_slc_arr, n_nz_fib_arr[:nf].copy(), int(aux_words)


def sorted_run_counts(cols):
    cdef const uint64_t[:, ::1] x = np.ascontiguousarray(cols, dtype=np.uint64)
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t nnz = x.shape[1]
    cdef Py_ssize_t k, r, ns = 0, nf = 0
    cdef bint new_slc, new_fib
    n_nz_slc_arr = np.empty(nnz, dtype=np.int64)
    n_fib_slc_arr = np.empty(nnz, dtype=np.int64)
    n_nz_fib_arr = np.empty(nnz, dtype=np.int64)
    cdef int64_t[::1] n_nz_slc = n_nz_slc_arr
    cdef int64_t[::1] n_fib_slc = n_fib_slc_arr
    cdef int64_t[::1] n_nz_fib = n_nz_fib_arr
    with nogil:
        for k in range(nnz):
            if k == 0:
                new_slc = True
            else:
                new_slc = False
                for r in range(m - 2):
                    if x[r, k] != x[r, k - 1]:
                        new_slc = True
                        break
            new_fib = new_slc or (k > 0 and x[m - 2, k] != x[m - 2, k - 1])
            if new_slc:
                n_nz_slc[ns] = 0
                n_fib_slc[ns] = 0
                ns += 1
            if new_fib:
                n_nz_fib[nf] = 0
                nf += 1
                n_fib_slc[ns - 1] += 1
            n_nz_slc[ns - 1] += 1
            n_nz_fib[nf - 1] += 1
    return n_nz_slc_arr[:ns].copy(), n_fib_slc_arr[:ns].copy(), n_nz_fib_arr[:nf].copy()


cdef inline uint64_t _mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline uint64_t _hash_row(const uint64_t[:, ::1] keys, Py_ssize_t row, Py_ssize_t kw) noexcept nogil:
    cdef uint64_t h = <uint64_t>0x9E3779B97F4A7C15
    cdef Py_ssize_t w
    for w in range(kw):
        h = _mix64(h ^ keys[row, w])
    return h


cdef struct Table:
    Py_ssize_t cap
    Py_ssize_t size
    Py_ssize_t kw
    uint64_t *keys
    int64_t *counts
    int64_t *first


cdef int _table_alloc(Table *t, Py_ssize_t cap, Py_ssize_t kw) noexcept nogil:
    cdef Py_ssize_t i
    t.cap = cap
    t.size = 0
    t.kw = kw
    t.keys = <uint64_t *> malloc(cap * (kw if kw > 0 else 1) * sizeof(uint64_t))
    t.counts = <int64_t *> malloc(cap * sizeof(int64_t))
    t.first = <int64_t *> malloc(cap * sizeof(int64_t))
    if t.keys == NULL or t.counts == NULL or t.first == NULL:
        return -1
    for i in range(cap):
        t.first[i] = -1
    return 0


cdef void _table_free(Table *t) noexcept nogil:
    free(t.keys)
    free(t.counts)
    free(t.first)


cdef int _table_grow(Table *t, const uint64_t[:, ::1] keys) noexcept nogil:
    cdef Table nt
    cdef Py_ssize_t i, b, w
    cdef uint64_t h
    if _table_alloc(&nt, t.cap * 2, t.kw) != 0:
        _table_free(&nt)
        return -1
    for i in range(t.cap):
        if t.first[i] < 0:
            continue
        h = _hash_row(keys, t.first[i], t.kw)
        b = <Py_ssize_t>(h % <uint64_t>nt.cap)
        while nt.first[b] >= 0:
            b += 1
            if b == nt.cap:
                b = 0
        nt.first[b] = t.first[i]
        nt.counts[b] = t.counts[i]
        for w in range(t.kw):
            nt.keys[b * t.kw + w] = t.keys[i * t.kw + w]
    nt.size = t.size
    _table_free(t)
    t[0] = nt
    return 0


def hash_tally(keys):
    """Open-addressing tally keyed by packed coordinate words.

    Starts from 100 buckets and doubles whenever the load passes one half.
    Unique keys are returned in bucket order.
    """
    cdef const uint64_t[:, ::1] kv = np.ascontiguousarray(keys, dtype=np.uint64)
    cdef Py_ssize_t n = kv.shape[0]
    cdef Py_ssize_t kw = kv.shape[1]
    cdef Py_ssize_t i, b, w, u = 0
    cdef uint64_t h
    cdef bint same
    cdef Table t
    cdef int err = 0
    with nogil:
        if _table_alloc(&t, HASH_INITIAL_BUCKETS, kw) != 0:
            err = 1
        else:
            for i in range(n):
                if 2 * (t.size + 1) > t.cap:
                    if _table_grow(&t, kv) != 0:
                        err = 1
                        break
                h = _hash_row(kv, i, kw)
                b = <Py_ssize_t>(h % <uint64_t>t.cap)
                while True:
                    if t.first[b] < 0:
                        t.first[b] = i
                        t.counts[b] = 1
                        for w in range(kw):
                            t.keys[b * kw + w] = kv[i, w]
                        t.size += 1
                        break
                    same = True
                    for w in range(kw):
                        if t.keys[b * kw + w] != kv[i, w]:
                            same = False
                            break
                    if same:
                        t.counts[b] += 1
                        break
                    b += 1
                    if b == t.cap:
                        b = 0
    if err:
        _table_free(&t)
        raise MemoryError("hash table allocation failed")
    uniq_arr = np.empty((t.size, kw), dtype=np.uint64)
    counts_arr = np.empty(t.size, dtype=np.int64)
    first_arr = np.empty(t.size, dtype=np.int64)
    cdef uint64_t[:, ::1] uq = uniq_arr
    cdef int64_t[::1] cn = counts_arr
    cdef int64_t[::1] fs = first_arr
    with nogil:
        for b in range(t.cap):
            if t.first[b] >= 0:
                cn[u] = t.counts[b]
                fs[u] = t.first[b]
                for w in range(kw):
                    uq[u, w] = t.keys[b * kw + w]
                u += 1
        _table_free(&t)
    return uniq_arr, counts_arr, first_arr


cdef int _cmp_i64(const void *a, const void *b) noexcept nogil:
    cdef int64_t x = (<const int64_t *>a)[0]
    cdef int64_t y = (<const int64_t *>b)[0]
    return (x > y) - (x < y)


cdef inline bint _set_insert(int64_t *slots, Py_ssize_t mask, int64_t v) noexcept nogil:
    # slots hold v or 0 (empty); v >= 1
    cdef Py_ssize_t b = <Py_ssize_t>(_mix64(<uint64_t>v) & <uint64_t>mask)
    while slots[b] != 0:
        if slots[b] == v:
            return False
        b = (b + 1) & mask
    slots[b] = v
    return True


def sample_distinct(counts, limit, u):
    cdef const int64_t[::1] cnt = np.ascontiguousarray(counts, dtype=np.int64)
    cdef const double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef int64_t lim = limit
    cdef Py_ssize_t n = cnt.shape[0]
    cdef Py_ssize_t total = 0, i, step, pos = 0, cap, maxc = 0
    cdef int64_t c, j, t, span, tmp
    for i in range(n):
        total += cnt[i]
        if cnt[i] > maxc:
            maxc = cnt[i]
    out_arr = np.empty(total, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cap = 1
    while cap < 2 * maxc + 2:
        cap <<= 1
    cdef int64_t *slots = <int64_t *> malloc(cap * sizeof(int64_t))
    cdef int64_t *perm = NULL
    if slots == NULL:
        raise MemoryError()
    with nogil:
        for i in range(n):
            c = cnt[i]
            if c == 0:
                continue
            if 2 * c <= lim:
                memset(slots, 0, cap * sizeof(int64_t))
                for step in range(c):
                    j = lim - c + step + 1
                    t = <int64_t>(uu[pos + step] * <double>j)
                    if t >= j:
                        t = j - 1
                    t += 1
                    if _set_insert(slots, cap - 1, t):
                        out[pos + step] = t
                    else:
                        _set_insert(slots, cap - 1, j)
                        out[pos + step] = j
            else:
                perm = <int64_t *> malloc(lim * sizeof(int64_t))
                for step in range(lim):
                    perm[step] = step + 1
                for step in range(c):
                    span = lim - step
                    t = <int64_t>(uu[pos + step] * <double>span)
                    if t >= span:
                        t = span - 1
                    tmp = perm[step]
                    perm[step] = perm[step + t]
                    perm[step + t] = tmp
                    out[pos + step] = perm[step]
                free(perm)
                perm = NULL
            qsort(&out[pos], c, sizeof(int64_t), _cmp_i64)
            pos += c
    free(slots)
    return out_arr
