import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from chivi.model import (
    CoxGrid,
    Dataset,
    DatasetError,
    FactorizationError,
    GPPrior,
    IntensityOverflowError,
    KernelParams,
    ModelError,
    load_csv_dataset,
    load_shot_csv,
    log_joint,
    make_conjugate_gaussian,
    make_cox_process,
    make_gp_classification,
    make_probit,
)


def fd_grad(f, z, rel=1e-5):
    g = np.empty_like(z)
    for j in range(z.size):
        h = rel * max(1.0, abs(z[j]))
        e = np.zeros_like(z)
        e[j] = h
        g[j] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def gp_model(n=8, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return make_gp_classification(Dataset(X, y), KernelParams(1.5, 1.2, 0.05))


def cox_model():
    rng = np.random.default_rng(1)
    grid = CoxGrid((0, 3), (0, 2), 3, 2, rng.integers(0, 4, 6))
    return make_cox_process(grid, KernelParams(1.0, 1.0, 0.01))


class TestLogJoint:
    def test_conjugate_matches_closed_form(self, conj1):
        z = conj1.posterior_mean
        want = stats.norm.logpdf(z[0], 0.0, 1.0) + stats.norm.logpdf(conj1.data[:, 0], z[0], 1.0).sum()
        assert log_joint(conj1, z) == pytest.approx(want, rel=1e-12)

    def test_full_subsample_equals_full(self, probit_small):
        z = np.array([0.3, -0.2, 0.7])
        full = log_joint(probit_small, z)
        assert log_joint(probit_small, z, np.arange(probit_small.data_count)) == pytest.approx(full, rel=1e-14)

    def test_subsample_scaling(self):
        m = make_probit(Dataset([[1.0], [-2.0]], [1.0, -1.0]), 1.0)
        z = np.array([0.4])
        want = m.log_prior(z) + 2.0 * m.log_lik_term(0, z)
        assert log_joint(m, z, [0]) == pytest.approx(want, rel=1e-14)

    def test_rejects_empty_subsample(self, probit_small):
        with pytest.raises(ModelError):
            log_joint(probit_small, np.zeros(3), [])

    def test_rejects_out_of_range(self, probit_small):
        with pytest.raises(ModelError):
            log_joint(probit_small, np.zeros(3), [0, 6])
        with pytest.raises(ModelError):
            log_joint(probit_small, np.zeros(3), [-1])

    def test_batch_matches_single(self, conj2):
        Z = np.random.default_rng(0).normal(size=(5, 2))
        assert_allclose(conj2.log_joint(Z), [conj2.log_joint(z) for z in Z], rtol=1e-14)

    def test_subsample_expectation_exhaustive(self, probit_small):
        z = np.array([0.2, 0.5, -0.4])
        N = probit_small.data_count
        for M in (1, 2, 4):
            vals = [log_joint(probit_small, z, list(s)) for s in itertools.combinations(range(N), M)]
            assert np.mean(vals) == pytest.approx(log_joint(probit_small, z), rel=1e-12)


class TestConjugateGaussian:
    def test_single_datum(self):
        m = make_conjugate_gaussian([0.0], [1.0], 1.0, [[0.0]])
        assert_allclose(m.posterior_mean, [0.0], atol=1e-15)
        assert_allclose(m.posterior_var, [0.5])
        assert m.log_evidence == pytest.approx(stats.norm.logpdf(0.0, 0.0, math.sqrt(2.0)), rel=1e-12)

    def test_no_data(self):
        m = make_conjugate_gaussian([0.3, -1.0], [2.0, 0.5], 1.0, np.zeros((0, 2)))
        assert m.log_evidence == pytest.approx(0.0, abs=1e-12)
        assert_allclose(m.posterior_mean, [0.3, -1.0])
        assert_allclose(m.posterior_var, [2.0, 0.5])

    def test_evidence_against_marginal_mvn(self, conj1):
        x = conj1.data[:, 0]
        cov = 1.0 * np.ones((x.size, x.size)) + np.eye(x.size)
        want = stats.multivariate_normal(np.zeros(x.size), cov).logpdf(x)
        assert conj1.log_evidence == pytest.approx(want, rel=1e-10)

    def test_two_dims_factor(self):
        rng = np.random.default_rng(3)
        data = rng.normal(size=(7, 2))
        both = make_conjugate_gaussian([0.1, -0.2], [1.0, 3.0], 0.7, data)
        a = make_conjugate_gaussian([0.1], [1.0], 0.7, data[:, :1])
        b = make_conjugate_gaussian([-0.2], [3.0], 0.7, data[:, 1:])
        assert both.log_evidence == pytest.approx(a.log_evidence + b.log_evidence, rel=1e-12)
        z = np.array([0.4, 0.9])
        assert log_joint(both, z) == pytest.approx(log_joint(a, z[:1]) + log_joint(b, z[1:]), rel=1e-12)

    @pytest.mark.parametrize("pv,nv", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
    def test_rejects_nonpositive_variance(self, pv, nv):
        with pytest.raises(ModelError):
            make_conjugate_gaussian([0.0], [pv], nv, [[1.0]])


class TestProbit:
    def test_zero_weights(self, probit_small):
        assert_allclose(probit_small.log_lik_terms(np.zeros(3)), np.log(0.5), rtol=1e-15)

    def test_far_tail_margin(self):
        m = make_probit(Dataset([[1.0]], [1.0]), 1.0)
        v = m.log_lik_term(0, np.array([-40.0]))
        mpmath.mp.dps = 50
        assert np.isfinite(v)
        assert v == pytest.approx(float(mpmath.log(mpmath.ncdf(-40))), rel=1e-10)

    def test_gradient_at_zero(self):
        m = make_probit(Dataset([[1.0]], [1.0]), 1e12)
        g = m.grad_z_log_joint(np.array([0.0]))[0]
        assert g == pytest.approx(2.0 * stats.norm.pdf(0.0), rel=1e-9)

    def test_monotone_and_bounded(self):
        m = make_probit(Dataset([[1.0]], [1.0]), 1.0)
        t = np.linspace(-50, 30, 400)[:, None]
        v = m.log_lik_terms(t)[:, 0]
        assert np.all(np.diff(v) >= 0)
        assert np.all(v <= 0)

    def test_intercept_column(self, probit_small):
        assert probit_small.latent_dim == 3
        assert_allclose(probit_small.X[:, 0], 1.0)

    def test_empty_dataset(self):
        with pytest.raises(ModelError):
            make_probit(Dataset(np.zeros((0, 2)), np.zeros(0)), 1.0)

    def test_predictive_matches_monte_carlo(self, probit_small):
        rng = np.random.default_rng(0)
        mean, sd = np.array([0.2, 0.8, -0.5]), np.array([0.3, 0.6, 0.4])
        x = np.array([[0.7, -1.2]])
        W = mean + sd * rng.standard_normal((200_000, 3))
        mc = stats.norm.cdf(W @ probit_small.design(x)[0]).mean()
        assert probit_small.predictive_prob(x, mean, sd)[0] == pytest.approx(mc, abs=3e-3)


class TestGP:
    def test_diagonal_is_signal_variance(self):
        m = gp_model()
        assert_allclose(np.diag(m.prior.K), 1.5)

    def test_identical_inputs_need_jitter(self):
        ds = Dataset([[0.0], [0.0]], [1.0, -1.0])
        m = make_gp_classification(ds, KernelParams(2.0, 1.0, 1e-6))
        assert m.prior.K[0, 1] == pytest.approx(2.0)
        assert np.isfinite(m.log_prior(np.zeros(2)))
        bare = make_gp_classification(ds, KernelParams(2.0, 1.0, 0.0))
        assert bare.prior.jitter > 0
        with pytest.raises(FactorizationError):
            GPPrior(ds.features, KernelParams(2.0, 1.0, 0.0), max_retries=0)

    def test_log_prior_matches_dense_mvn(self):
        X = np.array([[0.0], [0.5], [2.0]])
        kern = KernelParams(1.3, 0.8)
        m = make_gp_classification(Dataset(X, [1.0, -1.0, 1.0]), kern)
        d2 = (X - X.T) ** 2
        K = 1.3 * np.exp(-d2 / (2 * 0.8**2)) + m.prior.jitter * np.eye(3)
        f = np.array([0.3, -0.1, 0.9])
        assert m.log_prior(f) == pytest.approx(stats.multivariate_normal(np.zeros(3), K).logpdf(f), rel=1e-10)

    def test_reordering_invariance(self):
        m = gp_model(6, 2)
        perm = np.array([3, 0, 5, 1, 4, 2])
        ds = m.dataset
        mp = make_gp_classification(ds.subset(perm), m.kernel)
        f = np.random.default_rng(0).normal(size=6)
        assert mp.log_joint(f[perm]) == pytest.approx(m.log_joint(f), rel=1e-12)

    def test_max_n(self):
        with pytest.raises(ModelError):
            make_gp_classification(Dataset(np.zeros((5, 1)), np.ones(5)), KernelParams(1, 1), max_n=4)

    def test_kernel_validation(self):
        with pytest.raises(ModelError):
            KernelParams(0.0, 1.0)
        with pytest.raises(ModelError):
            KernelParams(1.0, -1.0)
        assert KernelParams(2.0, 1.0).jitter == pytest.approx(2e-6)


class TestCox:
    def test_zero_counts_at_zero(self):
        grid = CoxGrid((0, 4), (0, 2), 4, 2, np.zeros(8, dtype=int))
        m = make_cox_process(grid, KernelParams(1.0, 1.0))
        assert m.log_lik_terms(np.zeros(8)).sum() == pytest.approx(-grid.cell_area * 8)

    def test_single_cell_stationary_point(self):
        c, area = 7, 2.5
        grid = CoxGrid((0, 2.5), (0, 1), 1, 1, [c])
        m = make_cox_process(grid, KernelParams(1e8, 1.0))
        lik = lambda f: m.log_lik_term(0, np.array([f]))
        fstar = math.log(c / area)
        assert lik(fstar) > lik(fstar + 1e-3)
        assert lik(fstar) > lik(fstar - 1e-3)
        assert fd_grad(lambda z: lik(z[0]), np.array([fstar]))[0] == pytest.approx(0.0, abs=1e-6)

    def test_two_by_two_brute_force(self):
        counts = np.array([0, 3, 1, 5])
        grid = CoxGrid((0, 1), (0, 1), 2, 2, counts)
        kern = KernelParams(1.0, 0.7)
        m = make_cox_process(grid, kern)
        f = np.array([0.1, 1.2, -0.3, 1.6])
        A = grid.cell_area
        lik = sum(stats.poisson.logpmf(counts[i], A * math.exp(f[i])) for i in range(4))
        K = kern.matrix(grid.centers()) + m.prior.jitter * np.eye(4)
        prior = stats.multivariate_normal(np.zeros(4), K).logpdf(f)
        assert m.log_joint(f) == pytest.approx(prior + lik, rel=1e-10)

    def test_overflow_guard(self):
        m = cox_model()
        with pytest.raises(IntensityOverflowError):
            m.log_joint(np.full(6, 31.0))

    def test_from_events(self):
        grid = CoxGrid.from_events([0.5, 1.5, 2.9, 9.0], [0.5, 0.5, 1.9, 0.5], (0, 3), (0, 2), 3, 2)
        assert grid.cell_counts.sum() == 3
        assert grid.cell_area == pytest.approx(1.0)
        assert_allclose(grid.cell_counts, [1, 1, 0, 0, 0, 1])

    def test_rejects_bad_counts(self):
        with pytest.raises(ModelError):
            CoxGrid((0, 1), (0, 1), 1, 1, [-1])
        with pytest.raises(ModelError):
            make_cox_process(CoxGrid((0, 1), (0, 1), 3, 3, np.zeros(9)), KernelParams(1, 1), max_cells=4)


@pytest.mark.parametrize("name", ["conj1", "conj2", "probit5", "probit_small", "gp", "cox"])
def test_gradients_match_finite_differences(name, request):
    if name == "gp":
        m = gp_model()
    elif name == "cox":
        m = cox_model()
    else:
        m = request.getfixturevalue(name)
    rng = np.random.default_rng(5)
    for _ in range(20):
        z = rng.normal(size=m.latent_dim)
        g = m.grad_z_log_joint(z)
        fd = fd_grad(m.log_joint, z)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1.0)
        val, g2 = m.value_and_grad(z)
        assert val == pytest.approx(m.log_joint(z), rel=1e-14)
        assert_allclose(g2, g, rtol=1e-14)


def test_subsampled_gradient(probit_small):
    z = np.array([0.1, -0.3, 0.6])
    sub = [1, 4]
    fd = fd_grad(lambda v: probit_small.log_joint(v, sub), z)
    assert_allclose(probit_small.grad_z_log_joint(z, sub), fd, rtol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(-60, 60), st.floats(-60, 60))
def test_probit_term_monotone_property(a, b):
    m = make_probit(Dataset([[1.0]], [1.0]), 1.0)
    lo, hi = sorted((a, b))
    vl, vh = m.log_lik_term(0, np.array([lo])), m.log_lik_term(0, np.array([hi]))
    assert vl <= vh <= 0.0
    assert np.isfinite(vl)


class TestCsv:
    def test_three_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,label\n1,2,1\n3,4,-1\n5.5,6,1\n")
        ds = load_csv_dataset(p, "label")
        assert ds.N == 3
        assert_allclose(ds.features, [[1, 2], [3, 4], [5.5, 6]])
        assert_allclose(ds.labels, [1, -1, 1])
        assert ds.feature_names == ("a", "b")

    def test_label_map(self, tmp_path):
        p = tmp_path / "ion.csv"
        p.write_text("a1,a2,class\n0.1,0.2,g\n0.3,0.4,b\n")
        ds = load_csv_dataset(p, "class", label_map={"b": -1, "g": 1})
        assert_allclose(ds.labels, [1, -1])

    def test_nan_row_named(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,label\n1,1\nnan,-1\n")
        with pytest.raises(DatasetError, match="row 3"):
            load_csv_dataset(p, "label")

    def test_non_numeric_and_missing(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,label\nx,1\n")
        with pytest.raises(DatasetError, match="row 2"):
            load_csv_dataset(p, "label")
        with pytest.raises(DatasetError, match="missing"):
            load_csv_dataset(p, "target")
        with pytest.raises(DatasetError, match="label_map"):
            load_csv_dataset(p, "a", label_map={"g": 1})

    def test_standardize(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,label\n1,5,1\n3,5,-1\n5,5,1\n")
        ds = load_csv_dataset(p, "label", standardize=True)
        assert_allclose(ds.features.mean(axis=0), 0.0, atol=1e-15)
        assert_allclose(ds.features[:, 0].std(), 1.0)
        assert_allclose(ds.features[:, 1], 0.0)

    def test_shot_csv(self, tmp_path):
        p = tmp_path / "shots.csv"
        p.write_text("x,y,made\n0,1,1\n-24,39,0\n30,5,1\n")
        grid = load_shot_csv(p)
        assert grid.cell_counts.sum() == 2
        assert load_shot_csv(p, made_only=True).cell_counts.sum() == 1
