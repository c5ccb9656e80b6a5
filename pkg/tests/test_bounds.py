import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from chivi.bounds import (
    LogWeights,
    compute_log_weights,
    cubo_estimate,
    elbo_estimate,
    f_divergence_taylor,
    stabilize,
)
from chivi.model import make_conjugate_gaussian
from chivi.oracle import GaussianSpec, quad_chi_divergence, quad_cubo, quad_kl
from chivi.variational import VariationalParams


def exact_q(model):
    return VariationalParams(model.posterior_mean, np.log(model.posterior_sd))


class TestLogWeights:
    def test_exact_posterior_constant(self, conj2):
        lw = compute_log_weights(conj2, exact_q(conj2), 50, seed=1)
        assert_allclose(lw.values, conj2.log_evidence, rtol=1e-12)

    def test_single_draw(self, conj1):
        lw = compute_log_weights(conj1, VariationalParams([0.0], [0.0]), 1)
        assert lw.size == 1
        assert lw.max_log_w == lw.values[0]

    def test_deterministic(self, conj1):
        q = VariationalParams([0.2], [-0.5])
        a = compute_log_weights(conj1, q, 20, seed=9)
        b = compute_log_weights(conj1, q, 20, seed=9)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.z_draws, b.z_draws)

    def test_rejects_bad_input(self, conj1):
        with pytest.raises(ValueError):
            compute_log_weights(conj1, VariationalParams([0.0], [0.0]), 0)
        with pytest.raises(FloatingPointError):
            LogWeights.from_values([0.0, np.nan])


class TestStabilize:
    def test_two_values(self):
        assert_allclose(stabilize(np.array([0.0, -1.0])), [1.0, math.exp(-1.0)])

    def test_constant(self):
        assert_allclose(stabilize(np.full(4, 12.5)), 1.0)

    def test_underflow(self):
        w = stabilize(np.array([0.0, -1e4]))
        assert w[1] == 0.0
        assert not np.any(np.isnan(w))


class TestCubo:
    def test_constant_weights(self):
        for n in (1.5, 2.0, 4.0):
            assert cubo_estimate(np.full(10, -3.25), n).value == pytest.approx(-3.25, abs=1e-14)

    def test_exact_posterior(self, conj1):
        for S in (1, 7, 100):
            lw = compute_log_weights(conj1, exact_q(conj1), S, seed=S)
            for n in (1.5, 2.0, 3.0):
                assert cubo_estimate(lw, n).value == pytest.approx(conj1.log_evidence, abs=1e-10)

    def test_rejects_small_order(self):
        with pytest.raises(ValueError, match="elbo_estimate"):
            cubo_estimate(np.zeros(3), 1.0)

    def test_converges_to_quadrature(self):
        model = make_conjugate_gaussian([0.0], [1.0], 1.0, np.zeros((0, 1)))
        q = VariationalParams([0.3], [math.log(1.2)])
        lw = compute_log_weights(model, q, 1_000_000, seed=2)
        est = cubo_estimate(lw, 2.0)
        assert est.biased
        assert abs(est.value - quad_cubo(model, q, 2.0)) <= 3 * est.std_error

    def test_monotone_in_n(self, conj1):
        lw = compute_log_weights(conj1, VariationalParams([0.5], [-1.0]), 20_000, seed=3)
        vals = [cubo_estimate(lw, n) for n in (1.2, 1.5, 2.0, 3.0, 4.0)]
        for a, b in zip(vals[:-1], vals[1:]):
            assert a.value <= b.value + 3 * math.hypot(a.std_error, b.std_error)

    def test_unstabilized_identity(self):
        v = np.array([0.0, -0.3, -2.0, -0.7])
        plain = math.log(np.mean(np.exp(2.0 * v))) / 2.0
        assert cubo_estimate(v, 2.0).value == plain


class TestElbo:
    def test_exact_posterior(self, conj2):
        lw = compute_log_weights(conj2, exact_q(conj2), 30)
        assert elbo_estimate(lw).value == pytest.approx(conj2.log_evidence, abs=1e-10)

    def test_constant(self):
        est = elbo_estimate(np.full(5, 2.0))
        assert est.value == 2.0
        assert est.std_error == 0.0

    def test_below_cubo(self, probit5):
        lw = compute_log_weights(probit5, VariationalParams([0.5], [0.0]), 50_000, seed=4)
        e, c = elbo_estimate(lw), cubo_estimate(lw, 2.0)
        assert e.value <= c.value + 3 * math.hypot(e.std_error, c.std_error)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.floats(1.01, 4.0), st.floats(-100, 100))
def test_sandwich_and_shift(values, n, c):
    v = np.array(values)
    cubo = cubo_estimate(v, n).value
    assert elbo_estimate(v).value <= cubo + 1e-9
    assert cubo_estimate(v + c, n).value == pytest.approx(cubo + c, abs=1e-9)


class TestTaylor:
    def test_zero(self):
        assert f_divergence_taylor(np.zeros(5), [1.0, -1.0, 2.0, -6.0, 24.0]) == 0.0

    def test_chi2_only(self):
        p, q = GaussianSpec([0.0], [1.0]), VariationalParams([0.3], [0.1])
        d = quad_chi_divergence(p, q, 2.0)
        assert f_divergence_taylor([d], [2.0]) == pytest.approx(d, rel=1e-15)

    def test_kl_series_improves(self):
        p, q = GaussianSpec([0.0], [1.0]), GaussianSpec([0.15], [1.1]).as_params()
        kl = quad_kl(p, q, "pq")
        errs = []
        for k in (2, 4, 6):
            m = [quad_chi_divergence(p, q, i, central=True) for i in range(2, k + 1)]
            d = [(-1.0) ** i * math.factorial(i - 2) for i in range(2, k + 1)]
            errs.append(abs(f_divergence_taylor(m, d) - kl))
        assert errs[0] > errs[1] > errs[2]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            f_divergence_taylor([0.1, 0.2], [1.0])
