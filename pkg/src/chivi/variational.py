"""Gaussian variational families with reparameterized sampling.

Parameters are stored as a mean and a log standard deviation per dimension
(``log_scale = 0.5 * log variance``). The full-rank family adds the strictly
lower-triangular entries of the Cholesky factor; its diagonal is
``exp(log_scale)``. Flat parameter vectors are ordered
``[mean, log_scale, off_diag]``.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

LOG_2PI = math.log(2.0 * math.pi)

MEAN_FIELD = "mean-field"
FULL_RANK = "full-rank"


@dataclass(frozen=True)
class VariationalParams:
    mean: np.ndarray
    log_scale: np.ndarray
    off_diag: np.ndarray = None

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        ls = np.array(self.log_scale, dtype=np.float64).reshape(-1)
        if mean.shape != ls.shape:
            raise ValueError(f"mean {mean.shape} and log_scale {ls.shape} differ")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(ls))):
            raise ValueError("variational parameters must be finite")
        mean.flags.writeable = False
        ls.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_scale", ls)
        if self.off_diag is not None:
            D = mean.size
            off = np.array(self.off_diag, dtype=np.float64).reshape(-1)
            if off.size != D * (D - 1) // 2:
                raise ValueError(f"off_diag needs {D * (D - 1) // 2} entries, got {off.size}")
            if not np.all(np.isfinite(off)):
                raise ValueError("variational parameters must be finite")
            off.flags.writeable = False
            object.__setattr__(self, "off_diag", off)

    @property
    def dim(self):
        return self.mean.size

    @property
    def family(self):
        return MEAN_FIELD if self.off_diag is None else FULL_RANK

    @property
    def scale(self):
        return np.exp(self.log_scale)

    @property
    def num_params(self):
        return 2 * self.dim + (0 if self.off_diag is None else self.off_diag.size)

    def scale_tril(self):
        L = np.diag(self.scale)
        if self.off_diag is not None:
            L[np.tril_indices(self.dim, -1)] = self.off_diag
        return L

    def flat(self):
        parts = [self.mean, self.log_scale]
        if self.off_diag is not None:
            parts.append(self.off_diag)
        return np.concatenate(parts)

    def with_flat(self, vec):
        """New params of the same family from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_params:
            raise ValueError(f"expected {self.num_params} parameters, got {vec.size}")
        D = self.dim
        off = None if self.off_diag is None else vec[2 * D :]
        return VariationalParams(vec[:D], vec[D : 2 * D], off)

    def to_dict(self):
        d = {"family": self.family, "mean": self.mean.tolist(), "log_scale": self.log_scale.tolist()}
        if self.off_diag is not None:
            d["off_diag"] = self.off_diag.tolist()
        return d

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        family = d.get("family", MEAN_FIELD)
        if family not in (MEAN_FIELD, FULL_RANK):
            raise ValueError(f"unknown family {family!r}")
        off = d.get("off_diag")
        if family == FULL_RANK and off is None:
            D = len(d["mean"])
            off = np.zeros(D * (D - 1) // 2)
        return cls(d["mean"], d["log_scale"], off if family == FULL_RANK else None)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def init_params(dim, init="zero", seed=None, family=MEAN_FIELD, perturbation=0.1):
    """Zero init (mean 0, sd 1), or zero plus seeded N(0, perturbation^2) noise."""
    mean = np.zeros(dim)
    ls = np.zeros(dim)
    off = np.zeros(dim * (dim - 1) // 2) if family == FULL_RANK else None
    if init == "seeded-random":
        rng = np.random.default_rng(seed)
        mean = perturbation * rng.standard_normal(dim)
        ls = perturbation * rng.standard_normal(dim)
    elif init != "zero":
        raise ValueError(f"unknown init {init!r}")
    return VariationalParams(mean, ls, off)


@dataclass(frozen=True)
class NoiseDraw:
    eps: np.ndarray
    seed: int = 0
    stream: int = 0
    index: int = 0


def noise_rng(seed, stream=0, index=0):
    return np.random.default_rng([int(seed), int(stream), int(index)])


def draw_noise(seed, dim, count, stream=0, index=0):
    """Standard-normal noise of shape (count, dim), reproducible from (seed, stream, index)."""
    eps = noise_rng(seed, stream, index).standard_normal((count, dim))
    return NoiseDraw(eps, seed, stream, index)


def _eps(eps, dim):
    e = eps.eps if isinstance(eps, NoiseDraw) else np.asarray(eps, dtype=np.float64)
    if e.shape[-1] != dim:
        raise ValueError(f"noise has trailing dimension {e.shape[-1]}, expected {dim}")
    return e


def reparam_sample(params, eps):
    """z = mean + scale * eps (mean-field) or mean + L eps (full-rank)."""
    e = _eps(eps, params.dim)
    if params.off_diag is None:
        return params.mean + params.scale * e
    return params.mean + e @ params.scale_tril().T


def _check_z(params, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != params.dim:
        raise ValueError(f"z has trailing dimension {z.shape[-1]}, expected {params.dim}")
    return z


def _standardize(params, z):
    if params.off_diag is None:
        return (z - params.mean) / params.scale
    r = np.atleast_2d(z - params.mean)
    u = linalg.solve_triangular(params.scale_tril(), r.T, lower=True).T
    return u.reshape(z.shape)


def log_q(params, z):
    z = _check_z(params, z)
    u = _standardize(params, z)
    return -0.5 * np.sum(u * u, axis=-1) - 0.5 * params.dim * LOG_2PI - np.sum(params.log_scale)


def grad_z_log_q(params, z):
    z = _check_z(params, z)
    u = _standardize(params, z)
    if params.off_diag is None:
        return -u / params.scale
    Lt = params.scale_tril().T
    g = -linalg.solve_triangular(Lt, np.atleast_2d(u).T, lower=False).T
    return g.reshape(z.shape)


def grad_params_log_q(params, z):
    """Gradient of log q(z; params) in the flat parameters, with z held fixed.

    Mean-field: d/dmean = (z - mean)/sigma^2, d/dlog_scale = (z - mean)^2/sigma^2 - 1.
    """
    z = _check_z(params, z)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    D = params.dim
    if params.off_diag is None:
        r = z2 - params.mean
        var = params.scale**2
        g = np.concatenate([r / var, r * r / var - 1.0], axis=1)
    else:
        L = params.scale_tril()
        u = linalg.solve_triangular(L, (z2 - params.mean).T, lower=True)  # (D, B)
        v = linalg.solve_triangular(L.T, u, lower=False)  # L^{-T} u
        gmean = v.T
        # d/dL_ij of -0.5 |L^{-1} r|^2 is (L^{-T} u u^T)_ij
        G = v.T[:, :, None] * u.T[:, None, :]  # (B, D, D)
        diag = np.einsum("bii->bi", G) * params.scale - 1.0
        rows, cols = np.tril_indices(D, -1)
        g = np.concatenate([gmean, diag, G[:, rows, cols]], axis=1)
    return g[0] if single else g


def entropy(params):
    return 0.5 * params.dim * (1.0 + LOG_2PI) + float(np.sum(params.log_scale))


def reparam_jacobian_apply(params, eps, gz):
    """Chain rule through z = g(params, eps): maps dF/dz (B, D) to dF/dparams (B, P)."""
    e = np.atleast_2d(_eps(eps, params.dim))
    gz = np.atleast_2d(gz)
    if params.off_diag is None:
        return np.concatenate([gz, gz * e * params.scale], axis=1)
    D = params.dim
    rows, cols = np.tril_indices(D, -1)
    diag = gz * e * params.scale
    off = gz[:, rows] * e[:, cols]
    return np.concatenate([gz, diag, off], axis=1)
