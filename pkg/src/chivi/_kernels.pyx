# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: probit log-CDF terms and Poisson grid terms."""

from libc.math cimport erfc, exp, log, log1p, sqrt

cdef double _LOG_SQRT_2PI = 0.9189385332046727
cdef double _SQRT1_2 = 0.7071067811865476
cdef double _TAIL = -10.0


cdef inline double _log_ndtr(double t) nogil:
    cdef double t2, s, term
    cdef int k
    if t > 5.0:
        return log1p(-0.5 * erfc(t * _SQRT1_2))
    if t > _TAIL:
        return log(0.5 * erfc(-t * _SQRT1_2))
    # asymptotic series: Phi(t) ~ phi(t)/(-t) * sum_k (-1)^k (2k-1)!! / t^(2k)
    t2 = t * t
    s = 1.0
    term = 1.0
    for k in range(1, 9):
        term *= -(2.0 * k - 1.0) / t2
        s += term
    return -0.5 * t2 - log(-t) - _LOG_SQRT_2PI + log(s)


def log_ndtr(const double[::1] t, double[::1] out):
    cdef Py_ssize_t i, n = t.shape[0]
    with nogil:
        for i in range(n):
            out[i] = _log_ndtr(t[i])


def log_ndtr_ratio(const double[::1] t, double[::1] logcdf, double[::1] ratio):
    """Fill log Phi(t) and phi(t)/Phi(t) elementwise."""
    cdef Py_ssize_t i, n = t.shape[0]
    cdef double lc
    with nogil:
        for i in range(n):
            lc = _log_ndtr(t[i])
            logcdf[i] = lc
            ratio[i] = exp(-0.5 * t[i] * t[i] - _LOG_SQRT_2PI - lc)


def poisson_grid(const double[:, ::1] f, const double[::1] counts, double area,
                 double const_term, double[::1] value, double[:, ::1] grad):
    """Row sums of c*f - area*exp(f) plus const_term, and per-cell gradients."""
    cdef Py_ssize_t s, j, rows = f.shape[0], cols = f.shape[1]
    cdef double acc, e
    with nogil:
        for s in range(rows):
            acc = 0.0
            for j in range(cols):
                e = area * exp(f[s, j])
                acc += counts[j] * f[s, j] - e
                grad[s, j] = counts[j] - e
            value[s] = acc + const_term
