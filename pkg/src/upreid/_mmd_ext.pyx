# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Gaussian-kernel MMD sums and the median pairwise-distance heuristic.

Mirrors ``upreid._mmd_py`` function for function; ``upreid.kernels`` picks one
at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs

cnp.import_array()


cdef void _pair_sums(const double[::1] x, const double[::1] y,
                     const double[::1] inv2s2, const double[::1] invs2,
                     double* total, double* gx, bint same, bint ladder) noexcept nogil:
    # total += sum_{i,j} k(x_i, y_j); gx[i] += sum_j dk(x_i, y_j)/dx_i
    # ladder: bandwidths descending, each half the previous, so the next
    # kernel value is the fourth power of the current one (one exp per pair)
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], S = inv2s2.shape[0]
    cdef Py_ssize_t i, j, s, j0
    cdef double d, d2, kv, dk, acc = 0.0
    for i in range(n):
        j0 = i + 1 if same else 0
        for j in range(j0, m):
            d = x[i] - y[j]
            d2 = d * d
            kv = 0.0
            dk = 0.0
            for s in range(S):
                if ladder and s > 0:
                    kv = kv * kv
                    kv = kv * kv
                else:
                    kv = exp(-d2 * inv2s2[s])
                acc += kv
                dk -= kv * d * invs2[s]
            if gx != NULL:
                gx[i] += dk
                if same:
                    gx[j] -= dk
    if same:
        # off-diagonal pairs counted twice, diagonal k(x, x) = 1 per bandwidth
        acc = 2.0 * acc + <double>(n * S)
    total[0] += acc


def mmd2_grad(a, b, bandwidths, bint want_grad=True):
    """Biased MMD^2 between scalar samples ``a`` and ``b``; gradient w.r.t. ``a``."""
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    bw = np.sort(np.asarray(bandwidths, dtype=np.float64).ravel())[::-1].copy()
    cdef bint ladder = bw.size > 1 and bool(np.all(bw[1:] * 2.0 == bw[:-1]))
    cdef double[::1] inv2s2 = 1.0 / (2.0 * bw * bw)
    cdef double[::1] invs2 = 1.0 / (bw * bw)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], i
    cdef double saa = 0.0, sbb = 0.0, sab = 0.0
    g_aa = np.zeros(n, dtype=np.float64)
    g_ab = np.zeros(n, dtype=np.float64)
    cdef double[::1] gaa = g_aa
    cdef double[::1] gab = g_ab
    cdef double* paa = &gaa[0] if (want_grad and n > 0) else NULL
    cdef double* pab = &gab[0] if (want_grad and n > 0) else NULL
    with nogil:
        _pair_sums(av, av, inv2s2, invs2, &saa, paa, True, ladder)
        _pair_sums(bv, bv, inv2s2, invs2, &sbb, NULL, True, ladder)
        _pair_sums(av, bv, inv2s2, invs2, &sab, pab, False, ladder)
    value = saa / (n * n) + sbb / (m * m) - 2.0 * sab / (n * m)
    if not want_grad:
        return value, None
    return value, (2.0 / (n * n)) * g_aa - (2.0 / (n * m)) * g_ab


def median_abs_diff(x):
    """Median of |x_i - x_j| over all unordered pairs i < j."""
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], i, j, t = 0
    if n < 2:
        return 0.0
    buf = np.empty(n * (n - 1) // 2, dtype=np.float64)
    cdef double[::1] bv = buf
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                bv[t] = fabs(xv[i] - xv[j])
                t += 1
    return float(np.median(buf))
