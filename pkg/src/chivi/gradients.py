"""Stochastic gradients of the exponentiated CUBO and of the ELBO.

All estimators work on the flat variational parameter vector and are built
from the model's analytic ``grad_z_log_joint`` and the family's analytic
derivatives; nothing here uses autodiff.

The CUBO estimators use max-stabilized weights, so they estimate
``exp(-n * max log w) * grad L`` where ``L = exp(n * CUBO_n)``. The log of
the dropped factor is kept in ``scale_correction``.
"""

from dataclasses import dataclass

import numpy as np

from .variational import (
    draw_noise,
    grad_params_log_q,
    grad_z_log_q,
    log_q,
    reparam_jacobian_apply,
    reparam_sample,
)

REPARAM = "reparam"
SCORE = "score"
ELBO_REPARAM = "elbo_reparam"


class GradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class GradientEstimate:
    grad: np.ndarray
    estimator_tag: str
    sample_count: int
    scale_correction: float = 0.0  # n * max log w (log of the factor removed)
    log_weights: np.ndarray = None


def pairwise_sum(a):
    """Sum over axis 0 by recursive halving; order is fixed by the shape alone."""
    a = np.asarray(a)
    n = a.shape[0]
    if n <= 8:
        out = a[0].copy()
        for i in range(1, n):
            out += a[i]
        return out
    h = n // 2
    return pairwise_sum(a[:h]) + pairwise_sum(a[h:])


def _draw(model, params, B, subsample, seed, stream, index, eps):
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    if eps is None:
        eps = draw_noise(seed, params.dim, B, stream, index).eps
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    z = reparam_sample(params, eps)
    logp, gz = model.value_and_grad(z, subsample)
    lw = logp - log_q(params, z)
    bad = ~np.isfinite(lw)
    if bad.any():
        b = int(np.flatnonzero(bad)[0])
        raise GradientError(f"non-finite log-weight {lw[b]} at draw {b} (z={z[b]})")
    return eps, z, lw, gz


def _grad_log_w(params, eps, z, gz):
    # total derivative of log p(x, g) - log q(g; params): path terms through z
    # plus the direct parameter dependence of log q
    path = reparam_jacobian_apply(params, eps, gz - grad_z_log_q(params, z))
    return path - grad_params_log_q(params, z)


def _check(g, tag, per_draw=None):
    if not np.all(np.isfinite(g)):
        where = ""
        if per_draw is not None:
            bad = np.flatnonzero(~np.all(np.isfinite(per_draw), axis=1))
            where = f" (first bad draw {int(bad[0])})" if bad.size else ""
        raise GradientError(f"{tag} gradient is not finite{where}")
    return g


def reparam_grad(model, params, n=2.0, B=32, subsample=None, seed=0, stream=0, index=0, eps=None):
    """(n/B) sum_b w~_b^n grad log w_b, with w~ the max-stabilized weights."""
    n = float(n)
    if not n > 1.0:
        raise ValueError(f"n must be > 1, got {n}")
    eps, z, lw, gz = _draw(model, params, B, subsample, seed, stream, index, eps)
    c = lw.max()
    wn = np.exp(n * (lw - c))
    dlw = _grad_log_w(params, eps, z, gz)
    terms = wn[:, None] * dlw
    g = (n / lw.size) * pairwise_sum(terms)
    return GradientEstimate(_check(g, REPARAM, terms), REPARAM, lw.size, n * c, lw)


def score_grad(model, params, n=2.0, B=32, subsample=None, seed=0, stream=0, index=0, eps=None):
    """((1-n)/B) sum_b w~_b^n grad_params log q(z_b)."""
    n = float(n)
    if not n > 1.0:
        raise ValueError(f"n must be > 1, got {n}")
    eps, z, lw, _ = _draw(model, params, B, subsample, seed, stream, index, eps)
    c = lw.max()
    wn = np.exp(n * (lw - c))
    terms = wn[:, None] * grad_params_log_q(params, z)
    g = ((1.0 - n) / lw.size) * pairwise_sum(terms)
    return GradientEstimate(_check(g, SCORE, terms), SCORE, lw.size, n * c, lw)


def elbo_reparam_grad(model, params, B=32, subsample=None, seed=0, stream=0, index=0, eps=None):
    """(1/B) sum_b grad log w_b; ascent direction for the ELBO."""
    eps, z, lw, gz = _draw(model, params, B, subsample, seed, stream, index, eps)
    terms = _grad_log_w(params, eps, z, gz)
    g = pairwise_sum(terms) / lw.size
    return GradientEstimate(_check(g, ELBO_REPARAM, terms), ELBO_REPARAM, lw.size, 0.0, lw)


def stabilized_objective(model, params, n, eps, shift, subsample=None):
    """(1/B) sum_b exp(n (log w_b - shift)) at fixed noise; reparam_grad differentiates this."""
    eps = np.atleast_2d(eps)
    z = reparam_sample(params, eps)
    lw = model.log_joint(z, subsample) - log_q(params, z)
    return float(np.mean(np.exp(n * (lw - shift))))


def elbo_objective(model, params, eps, subsample=None):
    eps = np.atleast_2d(eps)
    z = reparam_sample(params, eps)
    return float(np.mean(model.log_joint(z, subsample) - log_q(params, z)))
