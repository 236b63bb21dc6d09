# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Semantics must match :mod:`frailnet._pykernels` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, INFINITY

cnp.import_array()


cdef inline double _logaddexp(double a, double b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def risk_logsumexp(const double[::1] eta_sorted, const cnp.int64_t[::1] starts):
    """log sum exp(eta) over every suffix ``eta_sorted[starts[k]:]``.

    ``starts`` must be nondecreasing. One reverse sweep, O(N + K).
    """
    cdef Py_ssize_t n = eta_sorted.shape[0]
    cdef Py_ssize_t K = starts.shape[0]
    out_arr = np.empty(K, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double acc = -INFINITY
    cdef Py_ssize_t i = n
    cdef Py_ssize_t k
    with nogil:
        for k in range(K - 1, -1, -1):
            while i > starts[k]:
                i -= 1
                acc = _logaddexp(acc, eta_sorted[i])
            out[k] = acc
    return out_arr


def pair_counts(const double[::1] time, const cnp.int64_t[::1] event,
                const double[::1] score, const cnp.int64_t[::1] group, Py_ssize_t n_groups):
    """Harrell pair accounting split into within-group and between-group pairs.

    A pair (i, j) is comparable when ``event[i]`` and ``time[i] < time[j]``;
    it scores 1 if ``score[i] > score[j]`` and 0.5 on a score tie.

    Returns ``(within_conc, within_comp, between_conc, between_comp)`` where the
    within arrays have one slot per group.
    """
    cdef Py_ssize_t n = time.shape[0]
    wc_arr = np.zeros(n_groups, dtype=np.float64)
    wn_arr = np.zeros(n_groups, dtype=np.int64)
    cdef double[::1] wc = wc_arr
    cdef cnp.int64_t[::1] wn = wn_arr
    cdef double bc = 0.0
    cdef cnp.int64_t bn = 0
    cdef Py_ssize_t i, j
    cdef double ti, si, c
    cdef cnp.int64_t gi
    with nogil:
        for i in range(n):
            if event[i] == 0:
                continue
            ti = time[i]
            si = score[i]
            gi = group[i]
            for j in range(n):
                if not (ti < time[j]):
                    continue
                if si > score[j]:
                    c = 1.0
                elif si == score[j]:
                    c = 0.5
                else:
                    c = 0.0
                if group[j] == gi:
                    wc[gi] += c
                    wn[gi] += 1
                else:
                    bc += c
                    bn += 1
    return wc_arr, wn_arr, bc, int(bn)
