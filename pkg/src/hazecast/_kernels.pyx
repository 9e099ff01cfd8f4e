# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled clustering kernels: pairwise series distances and agglomeration."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free, qsort

cnp.import_array()

cdef extern from "math.h":
    double INFINITY


cdef int _cmp_asc(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*>a)[0]
    cdef double y = (<const double*>b)[0]
    return (x > y) - (x < y)


cdef int _cmp_desc(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*>a)[0]
    cdef double y = (<const double*>b)[0]
    return (x < y) - (x > y)


cdef inline void _insertion_sort_desc(double* a, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(1, n):
        v = a[i]
        j = i - 1
        while j >= 0 and a[j] < v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v


cdef double _window_mean_sorted(double* r, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t lo = (n + 1) // 2 - 1
    cdef Py_ssize_t hi = (3 * n + 3) // 4 - 1
    cdef Py_ssize_t i, cnt = 0
    cdef double a, b, acc = 0.0
    if n < 4:
        return r[lo]
    a = r[lo]
    b = r[hi]
    for i in range(n):
        if r[i] >= a and r[i] <= b:
            acc += r[i]
            cnt += 1
    return acc / cnt


def window_mean(values):
    cdef double[::1] v = np.array(values, dtype=np.float64).ravel()
    cdef Py_ssize_t n = v.shape[0]
    qsort(&v[0], n, sizeof(double), _cmp_asc)
    return _window_mean_sorted(&v[0], n)


def distance_matrix(X):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], T = x.shape[1]
    cdef Py_ssize_t i, j, t
    cdef Py_ssize_t lo = (T + 1) // 2 - 1
    cdef Py_ssize_t hi = (3 * T + 3) // 4 - 1
    cdef double[::1] sums = np.zeros(n)
    cdef double[:, ::1] D = np.zeros((n, n))
    cdef double* buf = <double*>malloc(T * sizeof(double))
    cdef double wp, wq, diff, acc
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(n):
                acc = 0.0
                for t in range(T):
                    acc += x[i, t]
                sums[i] = acc
            for i in range(n):
                for j in range(i + 1, n):
                    for t in range(T):
                        wp = x[i, t] / sums[i]
                        wq = x[j, t] / sums[j]
                        diff = x[i, t] - x[j, t]
                        buf[t] = (wp if wp > wq else wq) * diff * diff
                    if T <= 64:
                        _insertion_sort_desc(buf, T)
                    else:
                        qsort(buf, T, sizeof(double), _cmp_desc)
                    acc = 0.0
                    for t in range(lo, hi + 1):
                        acc += buf[t]
                    D[i, j] = acc / (hi - lo + 1)
                    D[j, i] = D[i, j]
    finally:
        free(buf)
    return np.asarray(D)


def agglomerate_merges(Dm):
    cdef double[:, ::1] D = np.ascontiguousarray(Dm, dtype=np.float64)
    cdef Py_ssize_t n = D.shape[0]
    cdef double[:, ::1] link = np.array(D, dtype=np.float64)
    cdef Py_ssize_t[::1] ids = np.arange(n, dtype=np.intp)
    cdef Py_ssize_t[::1] head = np.arange(n, dtype=np.intp)
    cdef Py_ssize_t[::1] tail = np.arange(n, dtype=np.intp)
    cdef Py_ssize_t[::1] nxt = np.full(n, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] size = np.ones(n, dtype=np.intp)
    cdef char[::1] active = np.ones(n, dtype=np.int8)
    out = np.zeros((max(n - 1, 0), 4))
    cdef double[:, ::1] merges = out
    cdef Py_ssize_t step, r, c, s1, s2, keep, drop, o, p, q, k
    cdef Py_ssize_t ia, ib, ba, bb
    cdef double best, v
    cdef double* buf = <double*>malloc((n * n // 4 + 1) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for r in range(n):
                link[r, r] = INFINITY
            for step in range(n - 1):
                best = INFINITY
                s1 = -1
                s2 = -1
                ba = -1
                bb = -1
                for r in range(n):
                    if not active[r]:
                        continue
                    for c in range(r + 1, n):
                        if not active[c]:
                            continue
                        v = link[r, c]
                        if ids[r] < ids[c]:
                            ia = ids[r]
                            ib = ids[c]
                        else:
                            ia = ids[c]
                            ib = ids[r]
                        if s1 < 0 or v < best or (v == best and (ia < ba or (ia == ba and ib < bb))):
                            best = v
                            s1 = r
                            s2 = c
                            ba = ia
                            bb = ib
                merges[step, 0] = ba
                merges[step, 1] = bb
                merges[step, 2] = best
                merges[step, 3] = n + step
                keep = s1
                drop = s2
                nxt[tail[keep]] = head[drop]
                tail[keep] = tail[drop]
                size[keep] += size[drop]
                active[drop] = 0
                ids[keep] = n + step
                for o in range(n):
                    if not active[o] or o == keep:
                        continue
                    k = 0
                    p = head[keep]
                    while p >= 0:
                        q = head[o]
                        while q >= 0:
                            buf[k] = D[p, q]
                            k += 1
                            q = nxt[q]
                        p = nxt[p]
                    qsort(buf, k, sizeof(double), _cmp_asc)
                    v = _window_mean_sorted(buf, k)
                    link[keep, o] = v
                    link[o, keep] = v
    finally:
        free(buf)
    return out
