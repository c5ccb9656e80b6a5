import mpmath
import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import log_ndtr as scipy_log_ndtr

from chivi import kernels

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


def mp_log_ndtr(t):
    mpmath.mp.dps = 50
    return float(mpmath.log(mpmath.ncdf(t)))


@pytest.mark.parametrize("backend", BACKENDS)
class TestLogNdtr:
    def test_matches_high_precision_oracle(self, backend):
        ts = np.array([-60.0, -40.0, -25.0, -10.5, -10.0, -9.99, -3.0, 0.0, 2.0, 5.5, 9.0])
        want = np.array([mp_log_ndtr(t) for t in ts])
        assert_allclose(kernels.log_ndtr(ts, backend), want, rtol=1e-9, atol=1e-15)

    def test_far_tail_is_finite(self, backend):
        v = kernels.log_ndtr(np.array([-40.0]), backend)[0]
        assert np.isfinite(v)
        assert v == pytest.approx(mp_log_ndtr(-40.0), rel=1e-10)

    def test_ratio_is_derivative(self, backend):
        t = np.linspace(-30, 8, 77)
        h = 1e-6
        _, ratio = kernels.log_ndtr_and_ratio(t, backend)
        fd = (scipy_log_ndtr(t + h) - scipy_log_ndtr(t - h)) / (2 * h)
        assert_allclose(ratio, fd, rtol=1e-6)

    def test_ratio_at_zero(self, backend):
        _, ratio = kernels.log_ndtr_and_ratio(np.array([0.0]), backend)
        assert ratio[0] == pytest.approx(2.0 / np.sqrt(2 * np.pi), rel=1e-14)

    def test_poisson_grid(self, backend):
        rng = np.random.default_rng(0)
        f = rng.normal(size=(3, 7))
        counts = rng.integers(0, 5, 7).astype(float)
        val, grad = kernels.poisson_grid(f, counts, 0.5, -1.25, backend)
        assert_allclose(val, (counts * f - 0.5 * np.exp(f)).sum(axis=1) - 1.25, rtol=1e-13)
        assert_allclose(grad, counts - 0.5 * np.exp(f), rtol=1e-13)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="extension not built")
def test_backends_agree():
    t = np.linspace(-80, 12, 2001)
    a = kernels.log_ndtr_and_ratio(t, "python")
    b = kernels.log_ndtr_and_ratio(t, "cython")
    assert_allclose(a[0], b[0], rtol=1e-13, atol=1e-300)
    assert_allclose(a[1], b[1], rtol=1e-13)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.log_ndtr(np.zeros(2), "fortran")
