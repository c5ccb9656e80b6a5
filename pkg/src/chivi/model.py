"""Probabilistic models exposed to the inference code.

A model supplies a log-prior and per-datum log-likelihood terms over a
real latent vector, plus analytic gradients. Every method accepts either a
single latent ``z`` of shape ``(D,)`` or a batch of shape ``(S, D)`` and
returns results with the matching leading shape.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from . import kernels

LOG_2PI = math.log(2.0 * math.pi)


class ModelError(ValueError):
    pass


class DatasetError(ValueError):
    pass


class FactorizationError(ModelError, linalg.LinAlgError):
    pass


class IntensityOverflowError(FloatingPointError):
    """A latent log-intensity exceeded the configured bound."""


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        if X.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DatasetError(f"labels shape {y.shape} does not match {X.shape[0]} rows")
        if not np.all(np.isfinite(X)):
            raise DatasetError("features contain NaN or Inf")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise DatasetError("labels must be -1 or +1")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def N(self):
        return self.features.shape[0]

    @property
    def F(self):
        return self.features.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.features[idx], self.labels[idx], self.feature_names)

    def standardize(self, mean=None, scale=None):
        """Return (standardized dataset, mean, scale); stats default to this data's."""
        if mean is None:
            mean = self.features.mean(axis=0)
        if scale is None:
            scale = self.features.std(axis=0)
            scale = np.where(scale > 0, scale, 1.0)
        X = (self.features - mean) / scale
        return Dataset(X, self.labels, self.feature_names), mean, scale


@dataclass(frozen=True)
class KernelParams:
    """Squared-exponential kernel sigma^2 exp(-|a-b|^2 / (2 phi^2))."""

    signal_variance: float
    lengthscale: float
    jitter: float = None

    def __post_init__(self):
        if not self.signal_variance > 0:
            raise ModelError(f"signal_variance must be > 0, got {self.signal_variance}")
        if not self.lengthscale > 0:
            raise ModelError(f"lengthscale must be > 0, got {self.lengthscale}")
        if self.jitter is None:
            object.__setattr__(self, "jitter", 1e-6 * self.signal_variance)
        if self.jitter < 0:
            raise ModelError(f"jitter must be >= 0, got {self.jitter}")

    def matrix(self, a, b=None):
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        b = a if b is None else np.atleast_2d(np.asarray(b, dtype=np.float64))
        sq = (
            np.sum(a * a, axis=1)[:, None]
            + np.sum(b * b, axis=1)[None, :]
            - 2.0 * a @ b.T
        )
        np.maximum(sq, 0.0, out=sq)
        return self.signal_variance * np.exp(-0.5 * sq / self.lengthscale**2)


@dataclass(frozen=True)
class CoxGrid:
    x_range: tuple
    y_range: tuple
    nx: int
    ny: int
    cell_counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.cell_counts)
        if counts.shape != (self.nx * self.ny,):
            raise ModelError(f"cell_counts must have {self.nx * self.ny} entries")
        if np.any(counts < 0) or not np.all(counts == np.round(counts)):
            raise ModelError("cell_counts must be non-negative integers")
        if not (self.x_range[1] > self.x_range[0] and self.y_range[1] > self.y_range[0]):
            raise ModelError("grid extents must have positive width")
        object.__setattr__(self, "cell_counts", counts.astype(np.int64))
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        object.__setattr__(self, "y_range", tuple(float(v) for v in self.y_range))

    @property
    def dx(self):
        return (self.x_range[1] - self.x_range[0]) / self.nx

    @property
    def dy(self):
        return (self.y_range[1] - self.y_range[0]) / self.ny

    @property
    def cell_area(self):
        return self.dx * self.dy

    def centers(self):
        """Cell centres, row-major with x varying fastest: shape (nx*ny, 2)."""
        xs = self.x_range[0] + self.dx * (np.arange(self.nx) + 0.5)
        ys = self.y_range[0] + self.dy * (np.arange(self.ny) + 0.5)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    @classmethod
    def from_events(cls, x, y, x_range=(-25.0, 25.0), y_range=(0.0, 40.0), nx=25, ny=20):
        """Bin point events into cells; events outside the extents are dropped."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        inside = (
            (x >= x_range[0]) & (x <= x_range[1]) & (y >= y_range[0]) & (y <= y_range[1])
        )
        dx = (x_range[1] - x_range[0]) / nx
        dy = (y_range[1] - y_range[0]) / ny
        ix = np.minimum(((x[inside] - x_range[0]) / dx).astype(np.intp), nx - 1)
        iy = np.minimum(((y[inside] - y_range[0]) / dy).astype(np.intp), ny - 1)
        counts = np.bincount(iy * nx + ix, minlength=nx * ny)
        return cls(tuple(x_range), tuple(y_range), nx, ny, counts)


# ---------------------------------------------------------------------------
# Model contract
# ---------------------------------------------------------------------------


def _as_batch(z, dim):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    if z2.ndim != 2 or z2.shape[1] != dim:
        raise ModelError(f"latent has shape {z.shape}, expected (..., {dim})")
    return z2, single


def check_subsample(subsample, n):
    """Validate a subsample of data indices; returns it as an int array."""
    idx = np.asarray(subsample, dtype=np.intp).reshape(-1)
    if idx.size == 0:
        raise ModelError("subsample must contain at least one index (M >= 1)")
    if idx.min() < 0 or idx.max() >= n:
        raise ModelError(f"subsample indices must lie in [0, {n}), got [{idx.min()}, {idx.max()}]")
    return idx


class Model:
    """Base class: subclasses implement the prior and likelihood-term hooks."""

    latent_dim: int
    data_count: int
    name = "model"

    # hooks -------------------------------------------------------------
    def _log_prior(self, z):
        raise NotImplementedError

    def _grad_log_prior(self, z):
        raise NotImplementedError

    def _lik_terms(self, z, idx):
        """Per-datum log-likelihood terms, shape (S, len(idx))."""
        raise NotImplementedError

    def _lik_sum(self, z, idx, with_grad):
        """Sum of terms over ``idx`` (None means all data) and optionally its gradient."""
        ids = np.arange(self.data_count) if idx is None else idx
        if ids.size == 0:
            val = np.zeros(z.shape[0])
            return val, (np.zeros_like(z) if with_grad else None)
        val = self._lik_terms(z, ids).sum(axis=1)
        return val, (self._lik_grad(z, ids) if with_grad else None)

    def _lik_grad(self, z, idx):
        raise NotImplementedError

    # public ------------------------------------------------------------
    def log_prior(self, z):
        z2, single = _as_batch(z, self.latent_dim)
        out = self._log_prior(z2)
        return out[0] if single else out

    def log_lik_term(self, i, z):
        if not 0 <= int(i) < self.data_count:
            raise ModelError(f"datum index {i} outside [0, {self.data_count})")
        z2, single = _as_batch(z, self.latent_dim)
        out = self._lik_terms(z2, np.array([int(i)]))[:, 0]
        return out[0] if single else out

    def log_lik_terms(self, z, subsample=None):
        z2, single = _as_batch(z, self.latent_dim)
        idx = (
            np.arange(self.data_count)
            if subsample is None
            else check_subsample(subsample, self.data_count)
        )
        out = self._lik_terms(z2, idx)
        return out[0] if single else out

    def log_joint(self, z, subsample=None):
        """log p(z) + sum of likelihood terms, scaled by N/M on a subsample."""
        z2, single = _as_batch(z, self.latent_dim)
        val = self._log_prior(z2)
        if subsample is None:
            lik, _ = self._lik_sum(z2, None, False)
            val = val + lik
        else:
            idx = check_subsample(subsample, self.data_count)
            lik, _ = self._lik_sum(z2, idx, False)
            val = val + (self.data_count / idx.size) * lik
        return val[0] if single else val

    def grad_z_log_joint(self, z, subsample=None):
        z2, single = _as_batch(z, self.latent_dim)
        g = self._grad_log_prior(z2)
        if subsample is None:
            _, gl = self._lik_sum(z2, None, True)
            g = g + gl
        else:
            idx = check_subsample(subsample, self.data_count)
            _, gl = self._lik_sum(z2, idx, True)
            g = g + (self.data_count / idx.size) * gl
        return g[0] if single else g

    def value_and_grad(self, z, subsample=None):
        """log_joint and its gradient in one pass (shared likelihood work)."""
        z2, single = _as_batch(z, self.latent_dim)
        val = self._log_prior(z2)
        g = self._grad_log_prior(z2)
        if subsample is None:
            lik, gl = self._lik_sum(z2, None, True)
            scale = 1.0
        else:
            idx = check_subsample(subsample, self.data_count)
            lik, gl = self._lik_sum(z2, idx, True)
            scale = self.data_count / idx.size
        val = val + scale * lik
        g = g + scale * gl
        return (val[0], g[0]) if single else (val, g)

    def describe(self):
        """JSON-friendly description recorded in run metadata."""
        return {"kind": self.name, "latent_dim": self.latent_dim, "data_count": self.data_count}


def log_joint(model, z, subsample=None):
    return model.log_joint(z, subsample)


# ---------------------------------------------------------------------------
# Conjugate Gaussian
# ---------------------------------------------------------------------------


class ConjugateGaussian(Model):
    """z ~ N(m0, diag(v0)); x_i | z ~ N(z, s2 I). Posterior and evidence are exact."""

    name = "conjugate_gaussian"

    def __init__(self, prior_mean, prior_var, noise_var, data):
        self.prior_mean = np.atleast_1d(np.asarray(prior_mean, dtype=np.float64))
        self.prior_var = np.broadcast_to(
            np.asarray(prior_var, dtype=np.float64), self.prior_mean.shape
        ).copy()
        self.noise_var = float(noise_var)
        if np.any(self.prior_var <= 0) or not self.noise_var > 0:
            raise ModelError("prior and noise variances must be positive")
        D = self.prior_mean.size
        data = np.asarray(data, dtype=np.float64)
        if data.size == 0:
            data = np.zeros((0, D))
        data = data.reshape(-1, D)
        if not np.all(np.isfinite(data)):
            raise ModelError("data contain NaN or Inf")
        self.data = data
        self.latent_dim = D
        self.data_count = data.shape[0]

        prec = 1.0 / self.prior_var + self.data_count / self.noise_var
        self.posterior_var = 1.0 / prec
        self.posterior_mean = self.posterior_var * (
            self.prior_mean / self.prior_var + data.sum(axis=0) / self.noise_var
        )
        self.posterior_sd = np.sqrt(self.posterior_var)
        at = self.posterior_mean
        self.log_evidence = float(
            self.log_joint(at) + 0.5 * np.sum(LOG_2PI + np.log(self.posterior_var))
        )

    def _log_prior(self, z):
        r = z - self.prior_mean
        return -0.5 * np.sum(LOG_2PI + np.log(self.prior_var) + r * r / self.prior_var, axis=1)

    def _grad_log_prior(self, z):
        return -(z - self.prior_mean) / self.prior_var

    def _lik_terms(self, z, idx):
        r = self.data[idx][None, :, :] - z[:, None, :]
        return -0.5 * np.sum(LOG_2PI + math.log(self.noise_var) + r * r / self.noise_var, axis=2)

    def _lik_grad(self, z, idx):
        x = self.data[idx]
        return (x.sum(axis=0)[None, :] - idx.size * z) / self.noise_var

    def describe(self):
        d = super().describe()
        d.update(noise_var=self.noise_var, log_evidence=self.log_evidence)
        return d


def make_conjugate_gaussian(prior_mean, prior_var, noise_var, data):
    return ConjugateGaussian(prior_mean, prior_var, noise_var, data)


# ---------------------------------------------------------------------------
# Bayesian probit regression
# ---------------------------------------------------------------------------


class Probit(Model):
    """w ~ N(0, prior_var I); p(y_i | w) = Phi(y_i x_i^T w)."""

    name = "probit"

    def __init__(self, dataset, prior_var=1.0, intercept=False):
        if dataset.N == 0:
            raise ModelError("probit model needs at least one datum")
        if not prior_var > 0:
            raise ModelError("prior_var must be positive")
        X = dataset.features
        if intercept:
            X = np.column_stack([np.ones(dataset.N), X])
        self.X = X
        self.y = dataset.labels
        self.prior_var = float(prior_var)
        self.intercept = bool(intercept)
        self.latent_dim = X.shape[1]
        self.data_count = dataset.N

    def _log_prior(self, z):
        return -0.5 * (
            self.latent_dim * (LOG_2PI + math.log(self.prior_var))
            + np.sum(z * z, axis=1) / self.prior_var
        )

    def _grad_log_prior(self, z):
        return -z / self.prior_var

    def _margins(self, z, idx):
        return (z @ self.X[idx].T) * self.y[idx]

    def _lik_terms(self, z, idx):
        return kernels.log_ndtr(self._margins(z, idx))

    def _lik_sum(self, z, idx, with_grad):
        ids = np.arange(self.data_count) if idx is None else idx
        lc, ratio = kernels.log_ndtr_and_ratio(self._margins(z, ids))
        grad = (ratio * self.y[ids]) @ self.X[ids] if with_grad else None
        return lc.sum(axis=1), grad

    def _lik_grad(self, z, idx):
        return self._lik_sum(z, idx, True)[1]

    def design(self, features):
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if self.intercept:
            features = np.column_stack([np.ones(features.shape[0]), features])
        return features

    def predictive_prob(self, features, mean, sd):
        """P(y=+1 | x) under q = N(mean, diag(sd^2)), via the probit-Gaussian identity."""
        X = self.design(features)
        m = X @ mean
        v = (X * X) @ (np.asarray(sd) ** 2)
        return np.exp(kernels.log_ndtr(m / np.sqrt(1.0 + v)))

    def describe(self):
        d = super().describe()
        d.update(prior_var=self.prior_var, intercept=self.intercept)
        return d


def make_probit(dataset, prior_var=1.0, intercept=False):
    return Probit(dataset, prior_var, intercept)


# ---------------------------------------------------------------------------
# Gaussian-process latent models
# ---------------------------------------------------------------------------


class GPPrior:
    """Zero-mean Gaussian prior N(0, K + jitter I) with a cached Cholesky factor.

    On factorization failure the jitter is doubled up to ``max_retries`` times.
    """

    def __init__(self, inputs, kernel, max_retries=3):
        self.inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        self.kernel = kernel
        K = kernel.matrix(self.inputs)
        jitter = kernel.jitter
        n = K.shape[0]
        for attempt in range(max_retries + 1):
            try:
                chol = linalg.cholesky(K + jitter * np.eye(n), lower=True)
                # LAPACK accepts numerically singular matrices with rounding-level pivots
                floor = n * np.finfo(np.float64).eps * max(float(np.max(np.diag(K))), 0.0)
                if not np.min(np.diag(chol)) ** 2 > floor:
                    raise linalg.LinAlgError("zero pivot")
                break
            except linalg.LinAlgError:
                if attempt == max_retries:
                    raise FactorizationError(
                        f"kernel matrix not positive definite with jitter {jitter:.3g}"
                    ) from None
                jitter = 2.0 * jitter if jitter > 0 else 1e-10 * kernel.signal_variance
        self.jitter = jitter
        self.K = K
        self.chol = chol
        self.logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        self.dim = n

    def solve(self, b):
        return linalg.cho_solve((self.chol, True), b)

    def log_density(self, z):
        alpha = self.solve(z.T).T
        return -0.5 * (np.sum(z * alpha, axis=1) + self.logdet + self.dim * LOG_2PI)

    def grad(self, z):
        return -self.solve(z.T).T


class GPClassification(Model):
    """f ~ N(0, K); p(y_i | f) = Phi(y_i f_i)."""

    name = "gp_classification"

    def __init__(self, dataset, kernel, max_n=2000):
        if dataset.N == 0:
            raise ModelError("GP classification needs at least one datum")
        if dataset.N > max_n:
            raise ModelError(f"N={dataset.N} exceeds max_n={max_n} for a dense GP")
        self.dataset = dataset
        self.kernel = kernel
        self.prior = GPPrior(dataset.features, kernel)
        self.y = dataset.labels
        self.latent_dim = dataset.N
        self.data_count = dataset.N

    def _log_prior(self, z):
        return self.prior.log_density(z)

    def _grad_log_prior(self, z):
        return self.prior.grad(z)

    def _lik_terms(self, z, idx):
        return kernels.log_ndtr(z[:, idx] * self.y[idx])

    def _lik_sum(self, z, idx, with_grad):
        ids = np.arange(self.data_count) if idx is None else idx
        lc, ratio = kernels.log_ndtr_and_ratio(z[:, ids] * self.y[ids])
        grad = None
        if with_grad:
            grad = np.zeros_like(z)
            np.add.at(grad, (slice(None), ids), ratio * self.y[ids])
        return lc.sum(axis=1), grad

    def _lik_grad(self, z, idx):
        return self._lik_sum(z, idx, True)[1]

    def predict_latent(self, features, mean, sd):
        """Mean and variance of f(x*) under q pushed through the GP conditional."""
        Ks = self.kernel.matrix(self.dataset.features, features)
        A = self.prior.solve(Ks)
        m = A.T @ np.asarray(mean)
        kss = np.full(A.shape[1], self.kernel.signal_variance)
        v = kss - np.sum(Ks * A, axis=0) + (A * A).T @ (np.asarray(sd) ** 2)
        return m, np.maximum(v, 0.0)

    def predictive_prob(self, features, mean, sd):
        m, v = self.predict_latent(features, mean, sd)
        return np.exp(kernels.log_ndtr(m / np.sqrt(1.0 + v)))

    def describe(self):
        d = super().describe()
        d.update(
            signal_variance=self.kernel.signal_variance,
            lengthscale=self.kernel.lengthscale,
            jitter=self.prior.jitter,
        )
        return d


def make_gp_classification(dataset, kernel, max_n=2000):
    return GPClassification(dataset, kernel, max_n)


class CoxProcess(Model):
    """Discretized log-Gaussian Cox process on a grid of cells.

    f ~ N(0, K) over cell centres; count_i ~ Poisson(cell_area * exp(f_i)).
    The constant count_i * log(cell_area) - log(count_i!) is kept so the
    likelihood is the exact Poisson probability of the observed counts.
    """

    name = "cox_process"

    def __init__(self, grid, kernel, max_cells=2500, f_max=30.0):
        cells = grid.nx * grid.ny
        if cells > max_cells:
            raise ModelError(f"grid has {cells} cells, more than max_cells={max_cells}")
        self.grid = grid
        self.kernel = kernel
        self.prior = GPPrior(grid.centers(), kernel)
        self.counts = grid.cell_counts.astype(np.float64)
        self.area = grid.cell_area
        self.log_norm = gammaln(self.counts + 1.0) - self.counts * math.log(self.area)
        self.f_max = float(f_max)
        self.latent_dim = cells
        self.data_count = cells

    def _guard(self, z):
        if np.any(z > self.f_max):
            raise IntensityOverflowError(
                f"log-intensity {np.max(z):.3g} exceeds bound {self.f_max}; optimization diverging"
            )

    def _log_prior(self, z):
        return self.prior.log_density(z)

    def _grad_log_prior(self, z):
        return self.prior.grad(z)

    def _lik_terms(self, z, idx):
        self._guard(z)
        f = z[:, idx]
        return self.counts[idx] * f - self.area * np.exp(f) - self.log_norm[idx]

    def _lik_sum(self, z, idx, with_grad):
        self._guard(z)
        if idx is None:
            val, g = kernels.poisson_grid(z, self.counts, self.area, -self.log_norm.sum())
            return val, g
        val, gsub = kernels.poisson_grid(
            z[:, idx], self.counts[idx], self.area, -self.log_norm[idx].sum()
        )
        grad = None
        if with_grad:
            grad = np.zeros_like(z)
            np.add.at(grad, (slice(None), idx), gsub)
        return val, grad

    def _lik_grad(self, z, idx):
        return self._lik_sum(z, idx, True)[1]

    def describe(self):
        d = super().describe()
        d.update(
            nx=self.grid.nx,
            ny=self.grid.ny,
            cell_area=self.area,
            total_count=int(self.counts.sum()),
            signal_variance=self.kernel.signal_variance,
            lengthscale=self.kernel.lengthscale,
        )
        return d


def make_cox_process(grid, kernel, max_cells=2500, f_max=30.0):
    return CoxProcess(grid, kernel, max_cells, f_max)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def load_csv_dataset(path, label_column, feature_columns=None, label_map=None, standardize=False):
    """Read a headed CSV into a Dataset with labels in {-1, +1}.

    ``feature_columns`` defaults to every column except the label. Without a
    ``label_map`` the label cells must parse as -1/+1 (or 0/1, 0 meaning -1).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if label_column not in header:
            raise DatasetError(f"{path}: missing label column {label_column!r}")
        if feature_columns is None:
            feature_columns = [h for h in header if h != label_column]
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise DatasetError(f"{path}: missing feature columns {missing}")
        li = header.index(label_column)
        fi = [header.index(c) for c in feature_columns]
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            raw = row[li].strip()
            labels.append(_map_label(raw, label_map, path, lineno))
            vals = []
            for j in fi:
                cell = row[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(
                        f"{path}: row {lineno} column {header[j]!r} is not numeric: {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DatasetError(f"{path}: row {lineno} column {header[j]!r} is {cell}")
                vals.append(v)
            rows.append(vals)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(fi))
    ds = Dataset(X, np.array(labels, dtype=np.float64), tuple(feature_columns))
    if standardize:
        ds = ds.standardize()[0]
    return ds


def _map_label(raw, label_map, path, lineno):
    if label_map is not None:
        if raw not in label_map:
            raise DatasetError(f"{path}: row {lineno} label {raw!r} not in label_map")
        val = float(label_map[raw])
    else:
        try:
            val = float(raw)
        except ValueError:
            raise DatasetError(f"{path}: row {lineno} label {raw!r} is not numeric") from None
        if val == 0.0:
            val = -1.0
    if val not in (-1.0, 1.0):
        raise DatasetError(f"{path}: row {lineno} label {raw!r} maps to {val}, expected -1/+1")
    return val


def load_shot_csv(path, x_range=(-25.0, 25.0), y_range=(0.0, 40.0), nx=25, ny=20, made_only=False):
    """Bin a shot-event CSV (columns x, y, made) into a CoxGrid."""
    xs, ys = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if not {"x", "y"} <= cols:
            raise DatasetError(f"{path}: shot CSV needs columns x and y, found {sorted(cols)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                x, y = float(row["x"]), float(row["y"])
            except (TypeError, ValueError):
                raise DatasetError(f"{path}: row {lineno} has non-numeric coordinates") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise DatasetError(f"{path}: row {lineno} has non-finite coordinates")
            if made_only and "made" in cols and row["made"].strip() not in ("1", "true", "True"):
                continue
            xs.append(x)
            ys.append(y)
    return CoxGrid.from_events(xs, ys, x_range, y_range, nx, ny)
