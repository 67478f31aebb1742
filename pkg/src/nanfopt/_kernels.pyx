# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Must stay operation-for-operation identical to
``_fallback.py``; build with ``-ffp-contract=off`` (no fused multiply-add)."""
import numpy as np
cimport numpy as cnp

NAME = "cython"


cdef inline signed char _code(double dc, double dp, double a, double dn,
                              double sin45, double wall, double f_min,
                              double g_min, double g_upper) noexcept nogil:
    cdef double wall2 = 2.0 * wall
    cdef double om = 1 - a
    cdef double gap, air
    if dn <= om * dp - dc:
        return 1
    if dn <= f_min * om * dp:
        return 2
    gap = sin45 * dc + (sin45 - 1) * (dp + wall2)
    if gap < g_min or gap > g_upper:
        return 3
    air = om * dp - dn - wall * (1 + 2 * a)
    if air <= 0:
        return 4
    return 0


def validate_codes(const double[:, ::1] designs, double sin45, double wall,
                   double f_min, double g_min, double g_upper):
    cdef Py_ssize_t n = designs.shape[0], i
    codes = np.empty(n, dtype=np.int8)
    cdef signed char[::1] c = codes
    with nogil:
        for i in range(n):
            c[i] = _code(designs[i, 0], designs[i, 1], designs[i, 2], designs[i, 3],
                         sin45, wall, f_min, g_min, g_upper)
    return codes


def featurize(const double[:, ::1] designs, double sin45, double wall):
    cdef Py_ssize_t n = designs.shape[0], i
    cdef double wall2 = 2.0 * wall
    cdef double dc, dp, a, dn, om
    out = np.empty((n, 6))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            dc = designs[i, 0]
            dp = designs[i, 1]
            a = designs[i, 2]
            dn = designs[i, 3]
            om = 1 - a
            o[i, 0] = dc + 2 * om * (dp + wall2)
            o[i, 1] = dc
            o[i, 2] = dn
            o[i, 3] = dp
            o[i, 4] = dp * om
            o[i, 5] = sin45 * dc + (sin45 - 1) * (dp + wall2)
    return out


def expand_valid(const double[::1] d_core, const double[::1] d_cap,
                 const double[::1] alphas, const double[::1] fracs,
                 double sin45, double wall, double f_min, double g_min, double g_upper):
    cdef Py_ssize_t n_p = d_core.shape[0], n_a = alphas.shape[0], n_f = fracs.shape[0]
    cdef Py_ssize_t p, i, j, m = 0
    cdef double dc, dp, a, dn
    out = np.empty((n_p * n_a * n_f, 4))
    cdef double[:, ::1] o = out
    with nogil:
        for p in range(n_p):
            dc = d_core[p]
            dp = d_cap[p]
            for i in range(n_a):
                a = alphas[i]
                for j in range(n_f):
                    dn = fracs[j] * (1 - a) * dp
                    if _code(dc, dp, a, dn, sin45, wall, f_min, g_min, g_upper) == 0:
                        o[m, 0] = dc
                        o[m, 1] = dp
                        o[m, 2] = a
                        o[m, 3] = dn
                        m += 1
    return out[:m].copy()


cdef void _dense(const double* x, const double[:, ::1] w, const double[::1] b,
                 double* out, bint relu) noexcept nogil:
    cdef Py_ssize_t n_in = w.shape[0], n_out = w.shape[1], k, j
    cdef double xk
    for j in range(n_out):
        out[j] = b[j]
    for k in range(n_in):
        xk = x[k]
        for j in range(n_out):
            out[j] = out[j] + xk * w[k, j]
    if relu:
        for j in range(n_out):
            if out[j] < 0.0:
                out[j] = 0.0


def mlp_logits(const double[:, ::1] x, list weights, list biases):
    if len(weights) != 3:
        raise ValueError("compiled kernel supports exactly two hidden layers")
    cdef const double[:, ::1] w0 = weights[0]
    cdef const double[:, ::1] w1 = weights[1]
    cdef const double[:, ::1] w2 = weights[2]
    cdef const double[::1] b0 = biases[0]
    cdef const double[::1] b1 = biases[1]
    cdef const double[::1] b2 = biases[2]
    cdef Py_ssize_t n = x.shape[0], i
    h1_buf = np.empty(w0.shape[1])
    h2_buf = np.empty(w1.shape[1])
    o_buf = np.empty(w2.shape[1])
    cdef double[::1] h1 = h1_buf
    cdef double[::1] h2 = h2_buf
    cdef double[::1] o = o_buf
    result = np.empty(n)
    cdef double[::1] r = result
    with nogil:
        for i in range(n):
            _dense(&x[i, 0], w0, b0, &h1[0], True)
            _dense(&h1[0], w1, b1, &h2[0], True)
            _dense(&h2[0], w2, b2, &o[0], False)
            r[i] = o[0]
    return result
