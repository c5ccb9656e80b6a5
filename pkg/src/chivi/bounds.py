"""Monte Carlo estimates of the chi upper bound (CUBO) and the ELBO.

Both bounds are computed from the same vector of log importance weights
``log w = log p(x, z) - log q(z)`` so they can be compared draw for draw.
"""

import math
from dataclasses import dataclass

import numpy as np

from .variational import draw_noise, log_q, reparam_sample

CUBO = "CUBO"
ELBO = "ELBO"


@dataclass(frozen=True)
class LogWeights:
    values: np.ndarray
    z_draws: np.ndarray
    max_log_w: float

    @property
    def size(self):
        return self.values.size

    @classmethod
    def from_values(cls, values, z_draws=None):
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size == 0:
            raise ValueError("log-weights must be non-empty")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise FloatingPointError(f"non-finite log-weight at draw {bad}: {values[bad]}")
        return cls(values, z_draws, float(values.max()))


@dataclass(frozen=True)
class BoundEstimate:
    value: float
    order_n: float
    sample_count: int
    std_error: float
    kind: str
    biased: bool = False


def compute_log_weights(model, params, S, subsample=None, seed=0, stream=0, index=0):
    """Draw S reparameterized samples from q and return their log-weights."""
    if S < 1:
        raise ValueError(f"S must be >= 1, got {S}")
    eps = draw_noise(seed, params.dim, S, stream, index)
    z = reparam_sample(params, eps)
    lw = model.log_joint(z, subsample) - log_q(params, z)
    return LogWeights.from_values(lw, z)


def stabilize(lw):
    """exp(log w - max log w): every entry in [0, 1], the largest exactly 1."""
    values = lw.values if isinstance(lw, LogWeights) else np.asarray(lw, dtype=np.float64)
    if values.size == 0:
        raise ValueError("log-weights must be non-empty")
    return np.exp(values - values.max())


def cubo_estimate(lw, n=2.0):
    """Plug-in estimate of CUBO_n = (1/n) log mean(w^n).

    Biased for finite S (log of a mean); use it for monitoring, not as an
    optimization objective. The standard error is a delta-method value.
    """
    n = float(n)
    if not n > 1.0:
        raise ValueError(f"cubo_estimate needs n > 1, got {n}; use elbo_estimate for the lower bound")
    if not isinstance(lw, LogWeights):
        lw = LogWeights.from_values(lw)
    u = np.exp(n * (lw.values - lw.max_log_w))
    S = u.size
    m = u.mean()
    value = lw.max_log_w + math.log(m) / n
    se = float(u.std(ddof=1) / math.sqrt(S) / (n * m)) if S > 1 else 0.0
    return BoundEstimate(float(value), n, S, se, CUBO, biased=True)


def elbo_estimate(lw):
    if not isinstance(lw, LogWeights):
        lw = LogWeights.from_values(lw)
    S = lw.size
    se = float(lw.values.std(ddof=1) / math.sqrt(S)) if S > 1 else 0.0
    return BoundEstimate(float(lw.values.mean()), 0.0, S, se, ELBO)


def f_divergence_taylor(chi_divs, f_derivs_at_1):
    """sum_{i=2..k} f^(i)(1)/i! * D_i with D_i supplied for i = 2..k.

    ``D_i`` must be the central moments E_q[(p/q - 1)^i]; for i = 2 this is
    the chi^2 divergence.
    """
    chi = np.asarray(chi_divs, dtype=np.float64).reshape(-1)
    fd = np.asarray(f_derivs_at_1, dtype=np.float64).reshape(-1)
    if chi.size != fd.size:
        raise ValueError(f"length mismatch: {chi.size} divergences vs {fd.size} derivatives")
    if chi.size < 1:
        raise ValueError("need at least the i=2 term")
    orders = np.arange(2, 2 + chi.size)
    fact = np.array([math.factorial(int(i)) for i in orders], dtype=np.float64)
    return float(np.sum(fd / fact * chi))
