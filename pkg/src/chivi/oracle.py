"""Reference values for testing: tensor-grid quadrature in up to three
dimensions and a plain HMC sampler for larger latent spaces.

Quadrature works on log integrands with the trapezoid rule. The box is
centred on the densities involved and widened until the outermost layer of
nodes carries negligible mass, then refined until successive estimates agree.
"""

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .bounds import compute_log_weights
from .variational import VariationalParams, log_q

MAX_QUAD_DIM = 3
BOUNDARY_MASS = 1e-8


class QuadratureError(RuntimeError):
    pass


class HmcError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureGrid:
    lower: np.ndarray
    upper: np.ndarray
    nodes: int = 64
    rule: str = "trapezoid"

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise QuadratureError("grid bounds must satisfy lower < upper per dimension")
        if lo.size > MAX_QUAD_DIM:
            raise QuadratureError(f"quadrature limited to D <= {MAX_QUAD_DIM}, got {lo.size}")
        if self.nodes < 32:
            raise QuadratureError("need at least 32 nodes per dimension")
        if self.rule != "trapezoid":
            raise QuadratureError(f"unsupported rule {self.rule!r}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    def axes(self):
        return [np.linspace(a, b, self.nodes) for a, b in zip(self.lower, self.upper)]

    def points(self):
        """Nodes (P, D), log trapezoid weights (P,) and a boundary-node mask (P,)."""
        axes = self.axes()
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        logw = np.zeros(pts.shape[0])
        edge = np.zeros(pts.shape[0], dtype=bool)
        for d, ax in enumerate(axes):
            h = ax[1] - ax[0]
            w = np.full(self.nodes, h)
            w[0] = w[-1] = 0.5 * h
            idx = np.meshgrid(*[np.arange(self.nodes)] * self.dim, indexing="ij")[d].ravel()
            logw += np.log(w[idx])
            edge |= (idx == 0) | (idx == self.nodes - 1)
        return pts, logw, edge

    def refined(self):
        return QuadratureGrid(self.lower, self.upper, 2 * self.nodes - 1, self.rule)

    def widened(self, factor=1.5):
        c = 0.5 * (self.lower + self.upper)
        h = 0.5 * (self.upper - self.lower) * factor
        return QuadratureGrid(c - h, c + h, self.nodes, self.rule)


@dataclass(frozen=True)
class GaussianSpec:
    """A normalized diagonal Gaussian density, usable as either argument of a divergence."""

    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        s = np.broadcast_to(np.asarray(self.sd, dtype=np.float64), m.shape).copy()
        if np.any(s <= 0):
            raise ValueError("sd must be positive")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "sd", s)

    def logpdf(self, z):
        r = (z - self.mean) / self.sd
        return -0.5 * np.sum(r * r + math.log(2 * math.pi) + 2 * np.log(self.sd), axis=-1)

    def as_params(self):
        return VariationalParams(self.mean, np.log(self.sd))


@dataclass
class OracleResult:
    log_evidence: float = float("nan")
    posterior_mean: np.ndarray = None
    posterior_sd: np.ndarray = None
    divergences: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        for k in ("posterior_mean", "posterior_sd"):
            if d[k] is not None:
                d[k] = np.asarray(d[k]).tolist()
        d["divergences"] = {f"{k[0]}:{k[1]}" if isinstance(k, tuple) else str(k): v
                            for k, v in self.divergences.items()}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def cache_key(model_spec, config):
    """Content hash used to cache oracle results on disk."""
    blob = json.dumps({"model": model_spec, "config": config}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Densities and grids
# ---------------------------------------------------------------------------


class _Density:
    def __init__(self, logpdf, center, sd):
        self.logpdf = logpdf
        self.center = np.atleast_1d(np.asarray(center, dtype=np.float64))
        self.sd = np.atleast_1d(np.asarray(sd, dtype=np.float64))


def _mode(model, x0=None):
    D = model.latent_dim
    x0 = np.zeros(D) if x0 is None else np.asarray(x0, dtype=np.float64)
    method = "BFGS" if D <= 50 else "L-BFGS-B"
    res = optimize.minimize(
        lambda z: -model.log_joint(z),
        x0,
        jac=lambda z: -model.grad_z_log_joint(z),
        method=method,
        options={"gtol": 1e-10} if method == "BFGS" else {"maxiter": 5000},
    )
    return res.x


def neg_hessian(model, z):
    """Central finite-difference Hessian of -log p(x, z), symmetrized."""
    D = z.size
    h = 1e-5 * np.maximum(1.0, np.abs(z))
    H = np.empty((D, D))
    for j in range(D):
        e = np.zeros(D)
        e[j] = h[j]
        H[:, j] = (model.grad_z_log_joint(z - e) - model.grad_z_log_joint(z + e)) / (2 * h[j])
    return 0.5 * (H + H.T)


def laplace_cov(model, x0=None):
    """Posterior mode and the inverse negative Hessian there."""
    mode = _mode(model, x0)
    return mode, np.linalg.inv(neg_hessian(model, mode))


def laplace(model, x0=None):
    """Mode and curvature-based standard deviations of the posterior."""
    mode = _mode(model, x0)
    try:
        cov = np.linalg.inv(neg_hessian(model, mode))
        sd = np.sqrt(np.clip(np.diag(cov), 1e-12, None))
    except np.linalg.LinAlgError:
        sd = np.ones(model.latent_dim)
    return mode, sd


def _posterior_density(model, log_evidence=None):
    mode, sd = laplace(model)
    if log_evidence is None:
        log_evidence = quad_evidence(model)
    return _Density(lambda z: model.log_joint(z) - log_evidence, mode, sd)


def _as_density(spec):
    if isinstance(spec, _Density):
        return spec
    if isinstance(spec, GaussianSpec):
        return _Density(spec.logpdf, spec.mean, spec.sd)
    if isinstance(spec, VariationalParams):
        if spec.off_diag is None:
            sd = spec.scale
        else:
            L = spec.scale_tril()
            sd = np.sqrt(np.sum(L * L, axis=1))
        return _Density(lambda z: log_q(spec, z), spec.mean, sd)
    if hasattr(spec, "log_joint"):
        return _posterior_density(spec)
    raise TypeError(f"cannot build a density from {type(spec).__name__}")


def _box(densities, width=10.0, nodes=None):
    lo = np.min([d.center - width * d.sd for d in densities], axis=0)
    hi = np.max([d.center + width * d.sd for d in densities], axis=0)
    D = lo.size
    if D > MAX_QUAD_DIM:
        raise QuadratureError(f"quadrature limited to D <= {MAX_QUAD_DIM}, got {D}")
    if nodes is None:
        nodes = 65 if D <= 2 else 41
    return QuadratureGrid(lo, hi, nodes)


def _log_integrate(log_f, grid):
    pts, logw, edge = grid.points()
    vals = log_f(pts)
    vals = np.where(np.isnan(vals), -np.inf, vals)
    total = logsumexp(vals + logw)
    edge_mass = logsumexp(vals[edge] + logw[edge]) - total if np.any(edge) else -np.inf
    return total, edge_mass, vals[edge]


def adaptive_log_integral(log_f, grid, tol=1e-10, max_widen=8, max_refine=4):
    """log of the integral of exp(log_f) with automatic widening and refinement.

    Returns ``+inf`` when the integrand does not decay at the box boundary as
    the box grows (divergent integral).
    """
    prev_edge = None
    for _ in range(max_widen + 1):
        total, edge_mass, edge_vals = _log_integrate(log_f, grid)
        if not np.isfinite(total) and total > 0:
            return math.inf
        if edge_mass < math.log(BOUNDARY_MASS):
            break
        edge_max = float(np.max(edge_vals))
        if prev_edge is not None and edge_max >= prev_edge - 1e-9:
            return math.inf
        prev_edge = edge_max
        grid = grid.widened(2.0)
    else:
        if prev_edge is not None and float(np.max(edge_vals)) >= prev_edge - 1e-9:
            return math.inf
        raise QuadratureError(f"boundary mass fraction {math.exp(edge_mass):.3g} after widening")
    last = total
    for _ in range(max_refine):
        grid = grid.refined()
        if grid.dim == 3 and grid.nodes > 257:
            break
        total, _, _ = _log_integrate(log_f, grid)
        if abs(total - last) < tol:
            return float(total)
        last = total
    if abs(total - last) < max(tol, 1e-6):
        return float(total)
    raise QuadratureError(f"quadrature did not converge: last two log estimates {last!r}, {total!r}")


def _integrate(f, grid, tol=1e-12, max_refine=4):
    """Plain trapezoid integral of a possibly sign-changing integrand, refined to tol."""
    last = None
    for _ in range(max_refine + 1):
        pts, logw, _ = grid.points()
        val = float(np.sum(np.exp(logw) * f(pts)))
        if last is not None and abs(val - last) <= tol * max(1.0, abs(val)):
            return val
        last = val
        if grid.dim == 3 and grid.nodes > 129:
            break
        grid = grid.refined()
    return val


def _ensure_dim(model):
    if model.latent_dim > MAX_QUAD_DIM:
        raise QuadratureError(f"quadrature limited to D <= {MAX_QUAD_DIM}, model has {model.latent_dim}")


# ---------------------------------------------------------------------------
# Quadrature oracles
# ---------------------------------------------------------------------------


def quad_evidence(model, grid=None, tol=1e-6):
    """log p(x) by quadrature around a Laplace pilot fit (box of +/- 10 sd)."""
    _ensure_dim(model)
    if grid is None:
        mode, sd = laplace(model)
        grid = _box([_Density(None, mode, sd)])
    return adaptive_log_integral(model.log_joint, grid, tol=min(tol, 1e-10))


def quad_chi_divergence(p_spec, q_params, n=2.0, central=False):
    """D_chi^n(p || q) = E_q[(p/q)^n] - 1 by quadrature.

    ``central=True`` gives E_q[(p/q - 1)^n] instead (the terms of the
    f-divergence Taylor expansion; identical for n = 2). A divergent integral
    is reported as ``inf``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    p = _as_density(p_spec)
    q = _as_density(q_params)
    grid = _box([p, q])
    if not central:
        logI = adaptive_log_integral(lambda z: n * p.logpdf(z) + (1 - n) * q.logpdf(z), grid, tol=1e-12)
        return math.inf if math.isinf(logI) else math.expm1(logI)
    if math.isinf(quad_chi_divergence(p, q, n if float(n).is_integer() and n % 2 == 0 else n + 1)):
        return math.inf

    def integrand(z):
        lq = q.logpdf(z)
        lr = p.logpdf(z) - lq
        # log|r - 1| without cancellation
        with np.errstate(divide="ignore", invalid="ignore"):
            la = np.where(lr > 0, lr + np.log(-np.expm1(-lr)), np.log(-np.expm1(lr)))
        sign = np.where(lr >= 0, 1.0, (-1.0) ** n)
        return sign * np.exp(lq + n * la)

    return _integrate(integrand, _grid_for(p, q, n))


def _grid_for(p, q, n):
    # widen until the n-th power integrand is negligible at the edges
    grid = _box([p, q])
    logI = adaptive_log_integral(
        lambda z: n * p.logpdf(z) + (1 - n) * q.logpdf(z), grid, tol=1e-8, max_refine=1
    )
    if math.isinf(logI):
        raise QuadratureError("divergent integrand")
    for _ in range(8):
        _, edge, _ = _log_integrate(lambda z: n * p.logpdf(z) + (1 - n) * q.logpdf(z), grid)
        if edge < math.log(1e-14):
            break
        grid = grid.widened(1.5)
    return grid


def quad_kl(p_spec, q_params, direction="qp"):
    """KL(q || p) for direction 'qp', KL(p || q) for 'pq'."""
    p = _as_density(p_spec)
    q = _as_density(q_params)
    a, b = (q, p) if direction == "qp" else (p, q)
    if direction not in ("qp", "pq"):
        raise ValueError("direction must be 'qp' or 'pq'")
    grid = _box([p, q], width=12.0)
    return _integrate(lambda z: np.exp(a.logpdf(z)) * (a.logpdf(z) - b.logpdf(z)), grid)


def quad_f_divergence(p_spec, q_params, f):
    """D_f(p || q) = E_q[f(p/q)] for a vectorized f."""
    p = _as_density(p_spec)
    q = _as_density(q_params)
    grid = _box([p, q], width=12.0)
    return _integrate(lambda z: np.exp(q.logpdf(z)) * f(np.exp(p.logpdf(z) - q.logpdf(z))), grid)


def quad_cubo(model, q_params, n=2.0, grid=None):
    """CUBO_n = (1/n) log integral of p(x,z)^n q(z)^(1-n); ``inf`` if divergent."""
    _ensure_dim(model)
    if n <= 0:
        raise ValueError("n must be > 0")
    q = _as_density(q_params)
    if grid is None:
        mode, sd = laplace(model)
        grid = _box([_Density(None, mode, sd), q])
    logI = adaptive_log_integral(
        lambda z: n * model.log_joint(z) + (1 - n) * q.logpdf(z), grid, tol=1e-12
    )
    return logI / n


def quad_elbo(model, q_params):
    _ensure_dim(model)
    q = _as_density(q_params)
    grid = _box([q], width=12.0)
    return _integrate(lambda z: np.exp(q.logpdf(z)) * (model.log_joint(z) - q.logpdf(z)), grid)


def quad_posterior_moments(model, log_evidence=None):
    """Posterior mean and sd per dimension by quadrature."""
    _ensure_dim(model)
    mode, sd = laplace(model)
    if log_evidence is None:
        log_evidence = quad_evidence(model)
    grid = _box([_Density(None, mode, sd)])
    for _ in range(2):
        grid = grid.refined()
    pts, logw, _ = grid.points()
    w = np.exp(model.log_joint(pts) - log_evidence + logw)
    mean = w @ pts
    var = w @ (pts - mean) ** 2
    return mean, np.sqrt(var)


def quadrature_oracle(model, q_params=None, orders=(2.0,)):
    """Bundle evidence, moments and (optionally) divergences to a given q."""
    le = quad_evidence(model)
    mean, sd = quad_posterior_moments(model, le)
    res = OracleResult(le, mean, sd, diagnostics={"method": "quadrature"})
    if q_params is not None:
        post = _Density(lambda z: model.log_joint(z) - le, mean, sd)
        for n in orders:
            res.divergences[("chi", float(n))] = quad_chi_divergence(post, q_params, n)
        res.divergences[("kl_qp", 1.0)] = quad_kl(post, q_params, "qp")
        res.divergences[("kl_pq", 1.0)] = quad_kl(post, q_params, "pq")
    return res


# ---------------------------------------------------------------------------
# Closed-form Gaussian references
# ---------------------------------------------------------------------------


def gaussian_chi2(p_mean, p_sd, q_mean, q_sd):
    """Closed-form E_q[(p/q)^2] - 1 for 1-D Gaussians; inf when 2 q_sd^2 <= p_sd^2."""
    a, s, b, t = float(p_mean), float(p_sd), float(q_mean), float(q_sd)
    denom = 2 * t * t - s * s
    if denom <= 0:
        return math.inf
    return t * t / (s * math.sqrt(denom)) * math.exp((a - b) ** 2 / denom) - 1.0


def gaussian_kl(m1, s1, m2, s2):
    """KL(N(m1, s1^2) || N(m2, s2^2))."""
    return math.log(s2 / s1) + (s1 * s1 + (m1 - m2) ** 2) / (2 * s2 * s2) - 0.5


# ---------------------------------------------------------------------------
# HMC
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HmcConfig:
    step_size: float = 0.1
    leapfrog_steps: int = 20
    num_samples: int = 2000
    burn_in: int = 500
    seed: int = 0
    mass: str = "diag"  # "diag": adapted in burn-in; "laplace": dense, from the mode curvature
    step_jitter: float = 0.1

    def validate(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be >= 1")
        if not self.num_samples > self.burn_in >= 0:
            raise ValueError("need num_samples > burn_in >= 0")
        if self.mass not in ("diag", "laplace", "identity"):
            raise ValueError(f"unknown mass option {self.mass!r}")
        return self


class _Metric:
    """Kinetic energy 0.5 p^T C p with momentum p ~ N(0, C^{-1})."""

    def __init__(self, cov):
        cov = np.asarray(cov, dtype=np.float64)
        self.dense = cov.ndim == 2
        self.cov = cov
        if self.dense:
            self.prec_chol = np.linalg.cholesky(np.linalg.inv(cov))
        else:
            self.prec_sd = 1.0 / np.sqrt(cov)

    def velocity(self, p):
        return self.cov @ p if self.dense else self.cov * p

    def kinetic(self, p):
        return 0.5 * float(p @ self.velocity(p))

    def draw(self, rng, D):
        xi = rng.standard_normal(D)
        return self.prec_chol @ xi if self.dense else self.prec_sd * xi


def _leapfrog(grad, z, p, eps, L, metric):
    p = p + 0.5 * eps * grad(z)
    for i in range(L):
        z = z + eps * metric.velocity(p)
        g = grad(z)
        if i < L - 1:
            p = p + eps * g
    p = p + 0.5 * eps * g
    return z, p


def hmc_sample(model, cfg=None, init=None):
    """Leapfrog HMC with a Metropolis correction targeting p(z | x).

    ``num_samples`` counts all iterations; the first ``burn_in`` are dropped.
    With ``mass="diag"`` a diagonal metric is set from the first half of
    burn-in; ``mass="laplace"`` uses the inverse curvature at the mode, which
    removes the stiffness of strongly correlated Gaussian priors. Returns
    posterior mean/sd, batch-means standard errors and the acceptance rate.
    """
    cfg = (cfg or HmcConfig()).validate()
    rng = np.random.default_rng([int(cfg.seed), 7])
    D = model.latent_dim
    metric = _Metric(np.ones(D))
    if cfg.mass == "laplace":
        mode, cov = laplace_cov(model)
        metric = _Metric(cov)
        if init is None:
            init = mode
    if init is None:
        init = _mode(model)
    z = np.array(init, dtype=np.float64)
    logp = model.log_joint(z)
    grad = model.grad_z_log_joint
    kept = []
    accepted = 0
    accepted_kept = 0
    adapt_at = cfg.burn_in // 2 if cfg.mass == "diag" else -1
    pilot = []
    for it in range(cfg.num_samples):
        eps = cfg.step_size * (1.0 + cfg.step_jitter * (2.0 * rng.random() - 1.0))
        p0 = metric.draw(rng, D)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                z1, p1 = _leapfrog(grad, z, p0, eps, cfg.leapfrog_steps, metric)
                logp1 = model.log_joint(z1)
        except FloatingPointError:
            logp1 = -math.inf
        h0 = -logp + metric.kinetic(p0)
        h1 = -logp1 + metric.kinetic(p1) if np.isfinite(logp1) else math.inf
        if np.isfinite(h1) and math.log(rng.random()) < h0 - h1:
            z, logp = z1, logp1
            accepted += 1
            if it >= cfg.burn_in:
                accepted_kept += 1
        if it < cfg.burn_in and cfg.mass == "diag":
            if it >= cfg.burn_in // 4:
                pilot.append(z.copy())
            if it == adapt_at and len(pilot) > 10:
                var = np.var(np.array(pilot), axis=0)
                if np.all(var > 0):
                    metric = _Metric(np.clip(var / np.mean(var), 1e-3, 1e3))
        if it >= cfg.burn_in:
            kept.append(z.copy())
    n_kept = len(kept)
    rate = accepted_kept / n_kept
    if accepted == 0:
        raise HmcError("every HMC proposal was rejected; reduce step_size")
    if not 0.5 <= rate <= 0.95:
        warnings.warn(f"HMC acceptance rate {rate:.2f} outside [0.5, 0.95]", RuntimeWarning)
    S = np.array(kept)
    mean = S.mean(axis=0)
    sd = S.std(axis=0, ddof=1)
    nb = 20 if n_kept >= 40 else max(2, n_kept // 2)
    batches = np.array_split(S, nb)
    bm = np.array([b.mean(axis=0) for b in batches])
    se = bm.std(axis=0, ddof=1) / math.sqrt(nb)
    return OracleResult(
        float("nan"),
        mean,
        sd,
        diagnostics={"method": "hmc", "acceptance_rate": rate, "mc_se_mean": se, "kept": n_kept},
    )


# ---------------------------------------------------------------------------
# Importance-sampling variance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ISVariance:
    """Variances are of exp(-log_scale) * p_hat; multiply by exp(2 log_scale) for raw units."""

    variance: float
    std_error: float
    identity: float
    log_scale: float


def is_variance(model, q_params, S=10_000, seed=0):
    """Empirical variance of the importance-sampling evidence estimate with S draws.

    When quadrature applies, ``identity`` holds (exp(2 CUBO_2) - p(x)^2) / S
    in the same units; otherwise it is nan.
    """
    if S < 1000:
        raise ValueError("S must be >= 1000")
    lw = compute_log_weights(model, q_params, S, None, seed, stream=5)
    if model.latent_dim <= MAX_QUAD_DIM:
        shift = quad_evidence(model)
        cubo2 = quad_cubo(model, q_params, 2.0)
        identity = math.expm1(2.0 * (cubo2 - shift)) / S
    else:
        shift = lw.max_log_w
        identity = float("nan")
    w = np.exp(lw.values - shift)
    s2 = w.var(ddof=1)
    m4 = np.mean((w - w.mean()) ** 4)
    se_s2 = math.sqrt(max(m4 - s2 * s2 * (S - 3) / (S - 1), 0.0) / S)
    return ISVariance(s2 / S, se_s2 / S, identity, float(shift))
