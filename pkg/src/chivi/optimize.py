"""Training loops: CHIVI (CUBO descent), KLVI (ELBO ascent) and the sandwich runner.

Random streams are keyed by (seed, stream, iteration) so a run is a pure
function of its config: stream 0 feeds optimization draws, stream 1 the data
subsamples and stream 2 the independent monitor draws.
"""

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .bounds import compute_log_weights, cubo_estimate, elbo_estimate
from .gradients import GradientError, elbo_reparam_grad, reparam_grad, score_grad
from .model import IntensityOverflowError, ModelError
from .variational import init_params

log = logging.getLogger(__name__)

OPT_STREAM, SUBSAMPLE_STREAM, MONITOR_STREAM = 0, 1, 2

ROBBINS_MONRO = "robbins_monro"
ADAPTIVE = "adaptive"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    kind: str = ADAPTIVE
    base_rate: float = 0.1
    decay: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self):
        if self.kind not in (ROBBINS_MONRO, ADAPTIVE):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if not self.base_rate > 0:
            raise ConfigError("base_rate must be > 0")
        if self.kind == ROBBINS_MONRO and not 0.5 < self.decay <= 1.0:
            raise ConfigError("robbins_monro decay must lie in (0.5, 1]")
        if self.kind == ADAPTIVE:
            if not 0.0 <= self.decay <= 1.0:
                raise ConfigError("adaptive decay must lie in [0, 1]")
            if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
                raise ConfigError("adaptive needs beta1, beta2 in [0, 1) and eps > 0")
        return self


@dataclass(frozen=True)
class Convergence:
    window: int = 20
    tolerance: float = 1e-4


@dataclass(frozen=True)
class OptimizerConfig:
    n: float = 2.0
    S: int = 32
    M: int = None  # None: full data every step
    max_iters: int = 2000
    seed: int = 0
    estimator: str = "score"
    stabilize: str = "lagged"
    schedule: Schedule = field(default_factory=Schedule)
    init: str = "zero"
    convergence: Convergence = field(default_factory=Convergence)
    trace_every: int = 10
    monitor_samples: int = 1000
    checkpoint_every: int = 0
    checkpoint_dir: str = None
    log_scale_bounds: tuple = (-10.0, 5.0)
    max_grad_norm: float = 1e12
    max_param_abs: float = 1e6

    def validate(self, data_count=None):
        if not 1.0 < self.n <= 4.0:
            raise ConfigError(f"n must lie in (1, 4], got {self.n}")
        if self.S < 1:
            raise ConfigError("S must be >= 1")
        if self.M is not None:
            if self.M < 1:
                raise ConfigError("M must be >= 1")
            if data_count is not None and self.M > data_count:
                raise ConfigError(f"M={self.M} exceeds N={data_count}")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.estimator not in ("reparam", "score"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.stabilize not in ("lagged", "per_step"):
            raise ConfigError(f"unknown stabilize mode {self.stabilize!r}")
        if self.init not in ("zero", "seeded-random"):
            raise ConfigError(f"unknown init {self.init!r}")
        if self.trace_every < 1 or self.monitor_samples < 2:
            raise ConfigError("trace_every >= 1 and monitor_samples >= 2 required")
        self.schedule.validate()
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "schedule" in d and isinstance(d["schedule"], dict):
            d["schedule"] = Schedule(**d["schedule"])
        if "convergence" in d and isinstance(d["convergence"], dict):
            d["convergence"] = Convergence(**d["convergence"])
        if "log_scale_bounds" in d:
            d["log_scale_bounds"] = tuple(d["log_scale_bounds"])
        return cls(**d)


TRACE_COLUMNS = (
    "iteration", "elbo", "cubo", "n", "S", "elbo_se", "cubo_se", "grad_norm", "scale_correction",
)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    elbo: float
    cubo: float
    n: float
    S: int
    elbo_se: float
    cubo_se: float
    grad_norm: float
    scale_correction: float


@dataclass
class SandwichTrace:
    rows: list = field(default_factory=list)

    def append(self, row):
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError("trace iterations must be strictly increasing")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)


@dataclass(frozen=True)
class FitResult:
    params: object
    trace: SandwichTrace
    converged: bool
    iterations_run: int
    wall_time: float
    reason: str = ""
    clamp_hits: int = 0
    timings_ms: tuple = ()


def step_size(schedule, t):
    """Scalar rate at iteration t (0-based).

    robbins_monro: base_rate / (1 + t)^decay. adaptive: the same decayed rate
    times the moment bias correction sqrt(1 - beta2^(t+1)) / (1 - beta1^(t+1)).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    schedule.validate()
    rate = schedule.base_rate / (1.0 + t) ** schedule.decay
    if schedule.kind == ADAPTIVE:
        rate *= math.sqrt(1.0 - schedule.beta2 ** (t + 1)) / (1.0 - schedule.beta1 ** (t + 1))
    return rate


class Stepper:
    """Turns a descent direction into a parameter update under a schedule."""

    def __init__(self, schedule, size):
        self.schedule = schedule
        self.m = np.zeros(size)
        self.v = np.zeros(size)

    def update(self, grad, t):
        s = self.schedule
        rate = step_size(s, t)
        if s.kind == ROBBINS_MONRO:
            return rate * grad
        self.m = s.beta1 * self.m + (1.0 - s.beta1) * grad
        self.v = s.beta2 * self.v + (1.0 - s.beta2) * grad * grad
        return rate * self.m / (np.sqrt(self.v) + s.eps)


def monitor(model, params, n, S, seed, index):
    """ELBO and CUBO_n on one set of independent full-data draws."""
    lw = compute_log_weights(model, params, S, None, seed, MONITOR_STREAM, index)
    return elbo_estimate(lw), cubo_estimate(lw, n)


def _subsample(N, M, seed, t):
    rng = np.random.default_rng([int(seed), SUBSAMPLE_STREAM, int(t)])
    return np.sort(rng.choice(N, size=M, replace=False))


def _converged(cubo_values, window, tol):
    if tol <= 0 or len(cubo_values) < 2 * window:
        return False
    prev = np.mean(cubo_values[-2 * window : -window])
    last = np.mean(cubo_values[-window:])
    return abs(last - prev) / max(abs(prev), 1.0) < tol


def _run(model, init, cfg, direction_fn, label):
    cfg.validate(model.data_count)
    params = init if init is not None else init_params(model.latent_dim, cfg.init, cfg.seed)
    if params.dim != model.latent_dim:
        raise ConfigError(f"init params have dim {params.dim}, model has {model.latent_dim}")
    trace = SandwichTrace()
    timings = []
    stepper = Stepper(cfg.schedule, params.num_params)
    full = cfg.M is None or cfg.M >= model.data_count
    D = params.dim
    lo, hi = cfg.log_scale_bounds
    clamp_hits = 0
    cubo_hist = []
    t0 = time.perf_counter()
    converged = False
    reason = "max_iters"
    it = 0
    for t in range(cfg.max_iters):
        sub = None if full else _subsample(model.data_count, cfg.M, cfg.seed, t)
        try:
            est = direction_fn(model, params, sub, t)
        except (GradientError, IntensityOverflowError, FloatingPointError, ModelError) as exc:
            reason = f"aborted at iteration {t}: {exc}"
            log.warning("%s fit %s", label, reason)
            break
        g = est.grad
        gnorm = float(np.linalg.norm(g))
        if gnorm > cfg.max_grad_norm:
            reason = f"aborted at iteration {t}: gradient norm {gnorm:.3g} exceeds bound"
            log.warning("%s fit %s", label, reason)
            break
        vec = params.flat() - stepper.update(g, t)
        ls = vec[D : 2 * D]
        if np.any(ls < lo) or np.any(ls > hi):
            clamp_hits += 1
            log.info("%s fit: log_scale clamped at iteration %d", label, t)
            vec[D : 2 * D] = np.clip(ls, lo, hi)
        if not np.all(np.isfinite(vec)) or np.max(np.abs(vec)) > cfg.max_param_abs:
            reason = f"aborted at iteration {t}: parameters left the allowed range"
            log.warning("%s fit %s", label, reason)
            break
        params = params.with_flat(vec)
        it = t + 1
        if it % cfg.trace_every == 0:
            try:
                elbo, cubo = monitor(model, params, cfg.n, cfg.monitor_samples, cfg.seed, it)
            except (FloatingPointError, IntensityOverflowError) as exc:
                reason = f"aborted at iteration {it}: monitor failed: {exc}"
                log.warning("%s fit %s", label, reason)
                break
            trace.append(
                TraceRow(it, elbo.value, cubo.value, cfg.n, cfg.monitor_samples,
                         elbo.std_error, cubo.std_error, gnorm, est.scale_correction)
            )
            timings.append((it, (time.perf_counter() - t0) * 1e3))
            cubo_hist.append(cubo.value if label == "chivi" else elbo.value)
            w = cfg.convergence.window
            if _converged(cubo_hist, w, cfg.convergence.tolerance):
                converged = True
                reason = "converged"
                break
        if cfg.checkpoint_every and cfg.checkpoint_dir and it % cfg.checkpoint_every == 0:
            _checkpoint(cfg.checkpoint_dir, label, it, params)
    return FitResult(
        params, trace, converged, it, time.perf_counter() - t0, reason, clamp_hits, tuple(timings)
    )


def _checkpoint(directory, label, it, params):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, f"{label}_params_{it:07d}.json"), "w") as fh:
        json.dump(params.to_dict(), fh)


SHIFT_SMOOTHING = 0.1
MAX_RESCALE_LOG = 10.0


def _chivi_direction(cfg):
    est = reparam_grad if cfg.estimator == "reparam" else score_grad
    state = {"ref": None}

    def direction(model, params, sub, t):
        g = est(model, params, cfg.n, cfg.S, sub, cfg.seed, OPT_STREAM, t)
        if cfg.stabilize == "per_step":
            return g
        # The per-batch max shift scales each step by a factor that depends on
        # the same draws as the gradient, which biases the expected update.
        # Rescaling to a reference built from earlier steps only removes that.
        # Large upward jumps (early transients) fall back to the per-step shift.
        sc = g.scale_correction
        ref = sc if state["ref"] is None else max(state["ref"], sc - MAX_RESCALE_LOG)
        factor = math.exp(sc - ref)
        state["ref"] = ref + SHIFT_SMOOTHING * (sc - ref)
        return replace(g, grad=g.grad * factor, scale_correction=ref)

    return direction


def chivi_fit(model, init_params=None, cfg=None):
    """Minimize CUBO_n with stochastic gradients of exp(n * CUBO_n).

    A fresh uniform subsample of M data points (without replacement) is used
    each step unless M is None or M >= N, in which case every step sees the
    full data.
    """
    cfg = cfg or OptimizerConfig()
    return _run(model, init_params, cfg, _chivi_direction(cfg), "chivi")


def chivi_fit_full(model, init_params=None, cfg=None):
    """CHIVI on the full dataset every step (no average-likelihood subsampling)."""
    cfg = replace(cfg or OptimizerConfig(), M=None)
    return _run(model, init_params, cfg, _chivi_direction(cfg), "chivi")


def klvi_fit(model, init_params=None, cfg=None):
    """Maximize the ELBO with reparameterization gradients."""
    cfg = cfg or OptimizerConfig()

    def direction(model, params, sub, t):
        est = elbo_reparam_grad(model, params, cfg.S, sub, cfg.seed, OPT_STREAM, t)
        return replace(est, grad=-est.grad)

    return _run(model, init_params, cfg, direction, "klvi")


GAP_COLUMNS = ("iteration", "elbo", "cubo", "gap", "gap_se")


@dataclass(frozen=True)
class SandwichResult:
    chivi: FitResult
    klvi: FitResult
    gap_trace: list  # rows of (iteration, elbo, cubo, gap, gap_se)

    @property
    def final_gap(self):
        return self.gap_trace[-1][3] if self.gap_trace else float("nan")


def sandwich_run(model, chivi_cfg, klvi_cfg=None, init=None):
    """Run CHIVI and KLVI and pair the CHIVI upper bound with the KLVI lower bound.

    With a single config the KLVI run gets seed + 1 so the two fits use
    independent draws.
    """
    if klvi_cfg is None:
        klvi_cfg = replace(chivi_cfg, seed=chivi_cfg.seed + 1)
    chivi = chivi_fit(model, init, chivi_cfg)
    klvi = klvi_fit(model, init, klvi_cfg)
    upper = {r.iteration: r for r in chivi.trace.rows}
    gap = []
    for r in klvi.trace.rows:
        u = upper.get(r.iteration)
        if u is None:
            continue
        gap.append(
            (r.iteration, r.elbo, u.cubo, u.cubo - r.elbo, math.hypot(u.cubo_se, r.elbo_se))
        )
    return SandwichResult(chivi, klvi, gap)
