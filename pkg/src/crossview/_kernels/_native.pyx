# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: cyclic Jacobi sweeps and top-k selection.

Keep the arithmetic in lockstep with ``_fallback.py``: identical
elementwise expressions, no reductions, no fused multiply-add (the build
passes -ffp-contract=off), so both backends return bitwise-equal results.
"""

from libc.math cimport fabs, sqrt
from libc.stdint cimport int64_t

import numpy as np


def jacobi_cycle(double[:, ::1] a, double[:, ::1] v, double threshold, int max_sweeps):
    """See ``_fallback.jacobi_cycle``; same contract, compiled loop."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t p, q, i, j
    cdef int sweep, rotations
    cdef double apq, theta, t, c, s, xp, xq

    for sweep in range(max_sweeps):
        rotations = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if fabs(apq) <= threshold:
                    continue
                rotations += 1
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if fabs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c

                for j in range(n):
                    xp = a[p, j]
                    xq = a[q, j]
                    a[p, j] = c * xp - s * xq
                    a[q, j] = s * xp + c * xq
                for i in range(n):
                    xp = a[i, p]
                    xq = a[i, q]
                    a[i, p] = c * xp - s * xq
                    a[i, q] = s * xp + c * xq
                a[p, q] = 0.0
                a[q, p] = 0.0

                for i in range(n):
                    xp = v[i, p]
                    xq = v[i, q]
                    v[i, p] = c * xp - s * xq
                    v[i, q] = s * xp + c * xq
        if rotations == 0:
            return sweep + 1
    return -1


cdef inline bint _worse(double sa, int64_t ra, double sb, int64_t rb) noexcept:
    # True when (sa, ra) ranks strictly below (sb, rb): lower score first,
    # then higher id rank.
    if sa != sb:
        return sa < sb
    return ra > rb


def topk_select(double[::1] scores, int64_t[::1] id_rank, Py_ssize_t k):
    """See ``_fallback.topk_select``; single-pass bounded-heap selection."""
    cdef Py_ssize_t n = scores.shape[0]
    if k > n:
        k = n
    out = np.empty(k, dtype=np.int64)
    if k == 0:
        return out
    cdef int64_t[::1] result = out
    hs_arr = np.empty(k, dtype=np.float64)
    hr_arr = np.empty(k, dtype=np.int64)
    hi_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] hs = hs_arr
    cdef int64_t[::1] hr = hr_arr
    cdef int64_t[::1] hi = hi_arr

    # Min-heap keyed by "badness": the root is the worst kept candidate.
    cdef Py_ssize_t size = 0, i, j, parent, child, right
    cdef double s
    cdef int64_t r, idx
    for i in range(n):
        s = scores[i]
        r = id_rank[i]
        if size < k:
            j = size
            size += 1
            hs[j] = s
            hr[j] = r
            hi[j] = i
            while j > 0:
                parent = (j - 1) >> 1
                if _worse(hs[j], hr[j], hs[parent], hr[parent]):
                    hs[j], hs[parent] = hs[parent], hs[j]
                    hr[j], hr[parent] = hr[parent], hr[j]
                    hi[j], hi[parent] = hi[parent], hi[j]
                    j = parent
                else:
                    break
        elif _worse(hs[0], hr[0], s, r):
            hs[0] = s
            hr[0] = r
            hi[0] = i
            j = 0
            while True:
                child = 2 * j + 1
                if child >= k:
                    break
                right = child + 1
                if right < k and _worse(hs[right], hr[right], hs[child], hr[child]):
                    child = right
                if _worse(hs[child], hr[child], hs[j], hr[j]):
                    hs[j], hs[child] = hs[child], hs[j]
                    hr[j], hr[child] = hr[child], hr[j]
                    hi[j], hi[child] = hi[child], hi[j]
                    j = child
                else:
                    break

    # Pop worst-first into the tail so the result reads best-first.
    cdef Py_ssize_t m
    for m in range(size - 1, -1, -1):
        result[m] = hi[0]
        size -= 1
        hs[0] = hs[size]
        hr[0] = hr[size]
        hi[0] = hi[size]
        j = 0
        while True:
            child = 2 * j + 1
            if child >= size:
                break
            right = child + 1
            if right < size and _worse(hs[right], hr[right], hs[child], hr[child]):
                child = right
            if _worse(hs[child], hr[child], hs[j], hr[j]):
                hs[j], hs[child] = hs[child], hs[j]
                hr[j], hr[child] = hr[child], hr[j]
                hi[j], hi[child] = hi[child], hi[j]
                j = child
            else:
                break
    return out
