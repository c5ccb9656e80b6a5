import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from chivi.gradients import (
    GradientError,
    elbo_reparam_grad,
    pairwise_sum,
    reparam_grad,
    score_grad,
)
from chivi.model import make_conjugate_gaussian
from chivi.oracle import quad_cubo
from chivi.variational import VariationalParams, draw_noise, grad_params_log_q
from helpers import crn_fd_elbo, crn_fd_reparam, random_params, rel_err


def exact_q(model):
    return VariationalParams(model.posterior_mean, np.log(model.posterior_sd))


def prior_only():
    return make_conjugate_gaussian([0.0], [1.0], 1.0, np.zeros((0, 1)))


class TestReparam:
    @pytest.mark.parametrize("name", ["conj2", "probit5"])
    def test_crn_finite_differences(self, name, request):
        model = request.getfixturevalue(name)
        rng = np.random.default_rng(0)
        for k in range(5):
            q = random_params(rng, model)
            eps = draw_noise(k, model.latent_dim, 8).eps
            g = reparam_grad(model, q, 2.0, eps=eps)
            fd = crn_fd_reparam(model, q, 2.0, eps, g.scale_correction / 2.0)
            assert rel_err(g.grad, fd) <= 1e-4

    def test_hand_computed_single_draw(self):
        mu, ls, e, n = 0.4, -0.3, 1.7, 2.5
        q = VariationalParams([mu], [ls])
        g = reparam_grad(prior_only(), q, n, eps=np.array([[e]]))
        s = math.exp(ls)
        z = mu + s * e
        assert_allclose(g.grad, [n * -z, n * (-z * s * e + 1.0)], rtol=1e-12)
        assert g.sample_count == 1

    def test_zero_at_exact_posterior(self, conj1):
        q = exact_q(conj1)
        gs = np.array([reparam_grad(conj1, q, 2.0, B=16, seed=s).grad for s in range(40)])
        se = gs.std(axis=0, ddof=1) / math.sqrt(len(gs))
        assert np.all(np.abs(gs.mean(axis=0)) <= 3 * se + 1e-12)

    def test_unbiased_with_frozen_shift(self):
        model = make_conjugate_gaussian([0.0], [1.0], 0.5, [[0.8], [1.4]])
        q = VariationalParams([0.5], [math.log(0.7)])
        n, c0 = 2.0, model.log_evidence
        draws = []
        for s in range(200):
            g = reparam_grad(model, q, n, B=8, seed=s)
            draws.append(g.grad * math.exp(g.scale_correction - n * c0))
        draws = np.array(draws)
        mean = draws.mean(axis=0)
        se = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
        L = lambda p: math.exp(n * (quad_cubo(model, p, n) - c0))
        h = 1e-5
        flat = q.flat()
        fd = np.array([(L(q.with_flat(flat + h * e)) - L(q.with_flat(flat - h * e))) / (2 * h)
                       for e in np.eye(2)])
        assert np.all(np.abs(mean - fd) <= 3 * se)

    def test_nan_draw_is_reported(self, probit5):
        class Broken:
            latent_dim = 1

            def value_and_grad(self, z, sub=None):
                v = np.zeros(len(z))
                v[2] = np.nan
                return v, np.zeros_like(z)

        with pytest.raises(GradientError, match="draw 2"):
            reparam_grad(Broken(), VariationalParams([0.0], [0.0]), B=4)

    def test_rejects_bad_order_and_B(self, conj1):
        q = VariationalParams([0.0], [0.0])
        with pytest.raises(ValueError):
            reparam_grad(conj1, q, 1.0)
        with pytest.raises(ValueError):
            reparam_grad(conj1, q, 2.0, B=0)

    def test_deterministic(self, probit5):
        q = VariationalParams([0.3], [0.1])
        for fn in (reparam_grad, score_grad):
            a, b = fn(probit5, q, 2.0, seed=4, index=3), fn(probit5, q, 2.0, seed=4, index=3)
            assert np.array_equal(a.grad, b.grad)
        a, b = elbo_reparam_grad(probit5, q, seed=4), elbo_reparam_grad(probit5, q, seed=4)
        assert np.array_equal(a.grad, b.grad)


class TestScore:
    def test_single_draw_formula(self, probit5):
        q = VariationalParams([0.2], [-0.1])
        eps = np.array([[0.9]])
        g = score_grad(probit5, q, 3.0, eps=eps)
        z = q.mean + q.scale * eps[0]
        assert_allclose(g.grad, (1 - 3.0) * grad_params_log_q(q, z), rtol=1e-14)

    def test_zero_at_exact_posterior(self, conj1):
        q = exact_q(conj1)
        gs = np.array([score_grad(conj1, q, 2.0, B=16, seed=s).grad for s in range(40)])
        se = gs.std(axis=0, ddof=1) / math.sqrt(len(gs))
        assert np.all(np.abs(gs.mean(axis=0)) <= 3 * se + 1e-12)

    def test_agrees_with_reparam_in_expectation(self):
        model = make_conjugate_gaussian([0.0], [1.0], 0.5, [[0.8], [1.4]])
        q = VariationalParams([0.5], [math.log(0.7)])
        c0 = model.log_evidence
        out = {}
        for fn in (reparam_grad, score_grad):
            d = []
            for s in range(400):
                g = fn(model, q, 2.0, B=8, seed=s)
                d.append(g.grad * math.exp(g.scale_correction - 2.0 * c0))
            d = np.array(d)
            out[fn.__name__] = (d.mean(axis=0), d.std(axis=0, ddof=1) / math.sqrt(len(d)))
        (ma, sa), (mb, sb) = out["reparam_grad"], out["score_grad"]
        assert np.all(np.abs(ma - mb) <= 3 * np.hypot(sa, sb))


class TestElboGrad:
    @pytest.mark.parametrize("name", ["conj2", "probit5"])
    def test_crn_finite_differences(self, name, request):
        model = request.getfixturevalue(name)
        rng = np.random.default_rng(1)
        for k in range(5):
            q = random_params(rng, model)
            eps = draw_noise(k, model.latent_dim, 8).eps
            g = elbo_reparam_grad(model, q, eps=eps)
            assert rel_err(g.grad, crn_fd_elbo(model, q, eps)) <= 1e-4

    def test_zero_at_exact_posterior(self, conj2):
        q = exact_q(conj2)
        gs = np.array([elbo_reparam_grad(conj2, q, B=16, seed=s).grad for s in range(40)])
        se = gs.std(axis=0, ddof=1) / math.sqrt(len(gs))
        assert np.all(np.abs(gs.mean(axis=0)) <= 3 * se)


def test_pairwise_sum_matches_sum():
    a = np.random.default_rng(0).normal(size=(37, 3))
    assert_allclose(pairwise_sum(a), a.sum(axis=0), rtol=1e-13)
    assert np.array_equal(pairwise_sum(a), pairwise_sum(a.copy()))
