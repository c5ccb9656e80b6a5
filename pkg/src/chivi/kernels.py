"""Backend selection for the hot kernels.

The compiled extension is used when importable; setting ``CHIVI_PURE_PYTHON=1``
forces the numpy fallback. ``BACKEND`` names the active one.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("CHIVI_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"


def log_ndtr(t, backend=None):
    """log Phi(t) for an array of any shape, stable far into the left tail."""
    impl = _pick(backend)
    t = np.asarray(t, dtype=np.float64)
    flat = np.ascontiguousarray(t.reshape(-1))
    out = np.empty_like(flat)
    impl.log_ndtr(flat, out)
    return out.reshape(t.shape)


def log_ndtr_and_ratio(t, backend=None):
    """Return (log Phi(t), phi(t)/Phi(t)); the ratio is d/dt log Phi(t)."""
    impl = _pick(backend)
    t = np.asarray(t, dtype=np.float64)
    flat = np.ascontiguousarray(t.reshape(-1))
    lc = np.empty_like(flat)
    ratio = np.empty_like(flat)
    impl.log_ndtr_ratio(flat, lc, ratio)
    return lc.reshape(t.shape), ratio.reshape(t.shape)


def poisson_grid(f, counts, area, const_term=0.0, backend=None):
    """Per-row discretized Poisson log-likelihood and its gradient in f.

    ``f`` is (S, C); returns values (S,) and gradient (S, C).
    """
    impl = _pick(backend)
    f = np.ascontiguousarray(f, dtype=np.float64)
    counts = np.ascontiguousarray(counts, dtype=np.float64)
    value = np.empty(f.shape[0])
    grad = np.empty_like(f)
    impl.poisson_grid(f, counts, float(area), float(const_term), value, grad)
    return value, grad


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {backend!r}")
