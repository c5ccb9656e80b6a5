"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures, same branch points; used when the extension is not built.
"""

import numpy as np
from scipy.special import erfc

_LOG_SQRT_2PI = 0.9189385332046727
_SQRT1_2 = 0.7071067811865476
_TAIL = -10.0


def _log_ndtr(t):
    out = np.empty_like(t)
    hi = t > 5.0
    mid = (t > _TAIL) & ~hi
    lo = ~(hi | mid)
    out[hi] = np.log1p(-0.5 * erfc(t[hi] * _SQRT1_2))
    out[mid] = np.log(0.5 * erfc(-t[mid] * _SQRT1_2))
    if lo.any():
        tl = t[lo]
        t2 = tl * tl
        s = np.ones_like(tl)
        term = np.ones_like(tl)
        for k in range(1, 9):
            term = term * (-(2.0 * k - 1.0) / t2)
            s = s + term
        out[lo] = -0.5 * t2 - np.log(-tl) - _LOG_SQRT_2PI + np.log(s)
    return out


def log_ndtr(t, out):
    out[:] = _log_ndtr(np.asarray(t))


def log_ndtr_ratio(t, logcdf, ratio):
    t = np.asarray(t)
    lc = _log_ndtr(t)
    logcdf[:] = lc
    ratio[:] = np.exp(-0.5 * t * t - _LOG_SQRT_2PI - lc)


def poisson_grid(f, counts, area, const_term, value, grad):
    f = np.asarray(f)
    e = area * np.exp(f)
    value[:] = (counts * f - e).sum(axis=1) + const_term
    grad[:] = counts - e
