"""Conditional flow matching: schedules, conditional paths, training and ODE inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from ._validation import as_batch, check_finite
from .exceptions import ConfigError, NonFiniteError, SingularityError
from .mlp import Adam, VelocityModel

logger = logging.getLogger(__name__)

OT_ASSIGNMENT_CAP = 512


@dataclass(frozen=True)
class ScheduleParams:
    """Interpolation ``x_t = alpha(t) x1 + beta(t) x0`` and its time derivatives."""

    kind: str
    alpha: Callable[[float], float]
    beta: Callable[[float], float]
    alpha_dot: Callable[[float], float]
    beta_dot: Callable[[float], float]

    def __call__(self, t):
        return self.alpha(t), self.beta(t), self.alpha_dot(t), self.beta_dot(t)


def _check_time(t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t_arr)) or np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError(f"time must lie in [0, 1], got {t}")
    return t_arr


OT_SCHEDULE = ScheduleParams(
    kind="ot",
    alpha=lambda t: t,
    beta=lambda t: 1.0 - t,
    alpha_dot=lambda t: np.ones_like(np.asarray(t, dtype=float)),
    beta_dot=lambda t: -np.ones_like(np.asarray(t, dtype=float)),
)

SCHEDULES = {"ot": OT_SCHEDULE}


def get_schedule(kind="ot") -> ScheduleParams:
    try:
        return SCHEDULES[kind]
    except KeyError:
        raise ConfigError(f"unknown schedule {kind!r}") from None


def ot_schedule(t):
    """``(alpha, beta, alpha_dot, beta_dot) = (t, 1 - t, 1, -1)``."""
    t = _check_time(t)
    if t.ndim == 0:
        t = float(t)
        return t, 1.0 - t, 1.0, -1.0
    return OT_SCHEDULE(t)


@dataclass
class PathSample:
    """A batch of points on conditional paths together with regression targets."""

    x_t: np.ndarray
    v_target: np.ndarray
    t: np.ndarray
    s_target: np.ndarray | None = None


def sample_conditional_path(x0, x1, t, sigma_b=0.0, rng=None, eps=None, schedule=OT_SCHEDULE):
    """Draw ``x_t`` on the conditional path between ``x0`` and ``x1``.

    With ``sigma_b > 0`` the path is a Brownian bridge of scale ``sigma_b`` around
    the interpolant and a score target is returned as well.  Pass ``eps`` to fix
    the standard-normal draw instead of sampling it from ``rng``.
    """
    x0 = as_batch(x0)
    x1 = as_batch(x1, dim=x0.shape[1])
    if x0.shape != x1.shape:
        raise ValueError(f"x0 and x1 shapes differ: {x0.shape} vs {x1.shape}")
    t = np.broadcast_to(_check_time(t), (x0.shape[0],)).astype(float)
    a, b, da, db = (np.broadcast_to(np.asarray(c, dtype=float), t.shape)[:, None] for c in schedule(t))
    mu = a * x1 + b * x0
    v = da * x1 + db * x0
    if sigma_b < 0:
        raise ValueError("bridge noise must be non-negative")
    if sigma_b == 0:
        return PathSample(x_t=mu, v_target=v, t=t)

    var_t = t * (1.0 - t)
    if np.any(var_t <= 0.0):
        raise SingularityError("bridge variance vanishes at t in {0, 1}; clip sampled times")
    if eps is None:
        eps = np.random.default_rng(rng).standard_normal(x0.shape)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), x0.shape)
    dev = (sigma_b * np.sqrt(var_t))[:, None] * eps
    x_t = mu + dev
    v_target = v + ((1.0 - 2.0 * t) / (2.0 * var_t))[:, None] * dev
    s_target = -dev / (sigma_b**2 * var_t)[:, None]
    return PathSample(x_t=x_t, v_target=v_target, t=t, s_target=s_target)


def bridge_log_density(x, x0, x1, t, sigma_b, schedule=OT_SCHEDULE):
    """Log density of the Gaussian bridge ``N(mu_t, sigma_b^2 t(1-t) I)`` at ``x``."""
    a, b, _, _ = schedule(t)
    mu = a * np.asarray(x1, float) + b * np.asarray(x0, float)
    var = sigma_b**2 * t * (1.0 - t)
    d = np.asarray(x, float) - mu
    return -0.5 * np.sum(d * d, axis=-1) / var - 0.5 * d.shape[-1] * np.log(2 * np.pi * var)


def cfm_regression_loss(v_pred, targets: PathSample, s_pred=None):
    """Mean squared velocity error, plus mean squared score error when ``s_pred`` is given."""
    v_pred = np.asarray(v_pred, dtype=float)
    if v_pred.shape != targets.v_target.shape:
        raise ValueError(f"prediction shape {v_pred.shape} != target shape {targets.v_target.shape}")
    if v_pred.shape[0] == 0:
        raise ValueError("empty batch")
    loss = np.mean(np.sum((v_pred - targets.v_target) ** 2, axis=1))
    if s_pred is not None:
        if targets.s_target is None:
            raise ValueError("score predictions given but targets carry no score")
        s_pred = np.asarray(s_pred, dtype=float)
        if s_pred.shape != targets.s_target.shape:
            raise ValueError(f"score shape {s_pred.shape} != target shape {targets.s_target.shape}")
        loss += np.mean(np.sum((s_pred - targets.s_target) ** 2, axis=1))
    return float(loss)


def minibatch_ot_pairing(batch0, batch1, cap=OT_ASSIGNMENT_CAP):
    """Permutation ``pi`` minimising ``sum_i |batch0[i] - batch1[pi[i]]|^2``.

    Solved exactly as a linear assignment problem.
    """
    batch0 = as_batch(batch0)
    batch1 = as_batch(batch1, dim=batch0.shape[1])
    n = batch0.shape[0]
    if batch1.shape[0] != n:
        raise ValueError(f"batch sizes differ: {n} vs {batch1.shape[0]}")
    if n > cap:
        raise ValueError(f"batch of {n} exceeds the exact-assignment cap of {cap}")
    cost = cdist(batch0, batch1, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(n, dtype=int)
    perm[rows] = cols
    return perm


@dataclass
class TrainConfig:
    batch_size: int = 256
    n_steps: int = 2000
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    sigma_b: float = 0.0
    eps_t: float = 1e-3
    coupling: str = "independent"
    hidden: tuple[int, ...] = (128, 128, 128, 128)
    activation: str = "silu"
    score_head: bool | None = None
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.betas = tuple(self.betas)
        if self.batch_size < 1 or self.n_steps < 1:
            raise ConfigError("batch_size and n_steps must be positive")
        if not 0.0 < self.eps_t < 0.5:
            raise ConfigError("eps_t must lie in (0, 0.5)")
        if self.sigma_b < 0:
            raise ConfigError("sigma_b must be non-negative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.coupling not in ("independent", "minibatch_ot"):
            raise ConfigError(f"unknown coupling {self.coupling!r}")
        if self.coupling == "minibatch_ot" and self.batch_size > OT_ASSIGNMENT_CAP:
            raise ConfigError(f"minibatch_ot needs batch_size <= {OT_ASSIGNMENT_CAP}")
        if self.score_head and self.sigma_b == 0:
            raise ConfigError("a score head needs bridge noise sigma_b > 0")

    @property
    def use_score_head(self):
        return self.sigma_b > 0 if self.score_head is None else bool(self.score_head)


@dataclass
class TrainResult:
    model: VelocityModel
    loss_trace: np.ndarray


def train_flow(pair_sampler, config: TrainConfig, dim=None) -> TrainResult:
    """Fit a velocity (and optionally score) network by conditional flow matching.

    ``pair_sampler(n, rng)`` must return a couple ``(x0, x1)`` of ``(n, d)`` arrays.
    All randomness flows from ``config.seed``.
    """
    rng = np.random.default_rng(config.seed)
    init_rng, data_rng = (np.random.Generator(bg) for bg in rng.bit_generator.spawn(2))
    if dim is None:
        dim = as_batch(pair_sampler(1, np.random.default_rng(config.seed))[0]).shape[1]
    model = VelocityModel.init(
        dim, config.hidden, config.activation, score_head=config.use_score_head, rng=init_rng
    )
    opt = Adam(
        model.parameters(), lr=config.lr, betas=config.betas, eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )
    lo, hi = (config.eps_t, 1.0 - config.eps_t) if config.sigma_b > 0 else (0.0, 1.0)
    trace = np.empty(config.n_steps)
    B = config.batch_size
    for step in range(config.n_steps):
        x0, x1 = pair_sampler(B, data_rng)
        x0, x1 = as_batch(x0, dim=dim), as_batch(x1, dim=dim)
        if config.coupling == "minibatch_ot":
            x1 = x1[minibatch_ot_pairing(x0, x1)]
        t = data_rng.uniform(lo, hi, size=B)
        path = sample_conditional_path(x0, x1, t, config.sigma_b, rng=data_rng)
        v, s, cache = model.forward(path.x_t, path.t, cache=True)
        loss = cfm_regression_loss(v, path, s if model.score_head else None)
        if not np.isfinite(loss):
            raise NonFiniteError(
                f"non-finite loss at step {step}: loss={loss}, "
                f"|x_t|max={np.abs(path.x_t).max():.3g}, |v_target|max={np.abs(path.v_target).max():.3g}"
            )
        trace[step] = loss
        grad_v = 2.0 * (v - path.v_target) / B
        grad_s = 2.0 * (s - path.s_target) / B if model.score_head else None
        gw, gb = model.backward(cache, grad_v, grad_s)
        opt.step([*gw, *gb])
        if config.log_every and (step + 1) % config.log_every == 0:
            logger.info("step %d loss %.5f", step + 1, np.mean(trace[max(0, step - config.log_every + 1) : step + 1]))
    return TrainResult(model=model, loss_trace=trace)


def velocity_fn(model):
    """Normalise a model or a plain callable ``f(x, t)`` to a velocity function."""
    if hasattr(model, "velocity"):
        return model.velocity
    if callable(model):
        return model
    raise TypeError(f"{model!r} is neither a model nor a callable")


def integrate_ode(model, x0, n_steps):
    """Explicit Euler from t=0 to t=1 with ``dt = 1/n_steps``.

    Returns the trajectory, shape ``(n_steps + 1, n, d)``.
    """
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError("n_steps must be a positive integer")
    f = velocity_fn(model)
    x = as_batch(x0).copy()
    dt = 1.0 / n_steps
    traj = np.empty((n_steps + 1, *x.shape))
    traj[0] = x
    for k in range(n_steps):
        x = x + dt * f(x, k * dt)
        check_finite(x, f"ODE state at step {k + 1}")
        traj[k + 1] = x
    return traj
