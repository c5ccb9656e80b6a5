"""Shared numerical references for the test suite."""

import numpy as np

from chivi.gradients import elbo_objective, stabilized_objective


def crn_fd_reparam(model, params, n, eps, shift, h=1e-5):
    """Central differences of the fixed-noise stabilized objective in the flat parameters."""
    flat = params.flat()
    g = np.empty_like(flat)
    for j in range(flat.size):
        e = np.zeros_like(flat)
        e[j] = h
        up = stabilized_objective(model, params.with_flat(flat + e), n, eps, shift)
        dn = stabilized_objective(model, params.with_flat(flat - e), n, eps, shift)
        g[j] = (up - dn) / (2 * h)
    return g


def crn_fd_elbo(model, params, eps, h=1e-5):
    flat = params.flat()
    g = np.empty_like(flat)
    for j in range(flat.size):
        e = np.zeros_like(flat)
        e[j] = h
        up = elbo_objective(model, params.with_flat(flat + e), eps)
        dn = elbo_objective(model, params.with_flat(flat - e), eps)
        g[j] = (up - dn) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def random_params(rng, model, center=None):
    from chivi.variational import VariationalParams

    D = model.latent_dim
    c = np.zeros(D) if center is None else np.asarray(center)
    return VariationalParams(c + 0.5 * rng.normal(size=D), rng.uniform(-1.0, 0.3, D))


# one summary line per acceptance criterion, printed at the end of the session
ACCEPTANCE = []
