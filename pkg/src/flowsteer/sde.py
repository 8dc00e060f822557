"""Marginal-preserving stochastic sampling of a trained flow.

Adding isotropic noise ``sigma(t)`` to the flow ODE keeps the marginals of the
probability path provided the drift is corrected by ``sigma(t)^2 / 2`` times the
score.  For a standard-normal prior the score is an affine function of the
velocity; otherwise a learned score head is used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_batch, check_finite
from .exceptions import ConfigError, SingularityError
from .flow import OT_SCHEDULE, ScheduleParams, velocity_fn

SCORE_EPS_T = 1e-3
NOISE_KINDS = ("constant", "linear_decay")


@dataclass(frozen=True)
class NoiseSchedule:
    """Diffusion scale ``sigma(t)``: ``constant`` (sigma0) or ``linear_decay`` (sigma0 -> sigma1)."""

    kind: str = "linear_decay"
    sigma0: float = 0.3
    sigma1: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise schedule {self.kind!r}")
        if self.sigma0 < 0 or self.sigma1 < 0:
            raise ConfigError("noise levels must be non-negative")

    def __call__(self, t):
        if self.kind == "constant":
            return float(self.sigma0)
        return float((1.0 - t) * self.sigma0 + t * self.sigma1)

    @property
    def is_zero(self):
        return self.sigma0 == 0 and (self.kind == "constant" or self.sigma1 == 0)

    @classmethod
    def zero(cls):
        return cls("constant", 0.0, 0.0)


def gaussian_score_from_velocity(x, v, t, schedule: ScheduleParams = OT_SCHEDULE, eps_t=SCORE_EPS_T):
    """Score of the marginal path for a standard-normal prior, from the velocity.

    ``grad log p_t(x) = (v - (a'/a) x) / (b ((a'/a) b - b'))``.  Only defined on
    ``[eps_t, 1 - eps_t]``; callers integrating from t=0 clip first.
    """
    if not eps_t <= t <= 1.0 - eps_t:
        raise SingularityError(f"score formula is singular near t={t}; valid range [{eps_t}, {1 - eps_t}]")
    a, b, da, db = (float(c) for c in schedule(t))
    if a == 0.0:
        raise SingularityError("alpha(t) = 0")
    ratio = da / a
    denom = b * (ratio * b - db)
    if denom == 0.0:
        raise SingularityError("score denominator vanishes")
    return (np.asarray(v, float) - ratio * np.asarray(x, float)) / denom


@dataclass(frozen=True)
class ScoreSource:
    """Where the score comes from: ``analytic_gaussian`` (needs an N(0, I) prior) or ``learned``."""

    variant: str = "analytic_gaussian"
    schedule: ScheduleParams = OT_SCHEDULE

    def __post_init__(self):
        if self.variant not in ("analytic_gaussian", "learned"):
            raise ConfigError(f"unknown score source {self.variant!r}")

    @classmethod
    def analytic(cls, schedule=OT_SCHEDULE):
        return cls("analytic_gaussian", schedule)

    @classmethod
    def learned(cls):
        return cls("learned")

    def __call__(self, model, x, t, v):
        if self.variant == "learned":
            return model.score(x, t)
        tc = min(max(t, SCORE_EPS_T), 1.0 - SCORE_EPS_T)
        return gaussian_score_from_velocity(x, v, tc, self.schedule)


def corrected_drift(v, score, sigma_t):
    """``v + sigma_t^2 / 2 * score``: the drift that keeps marginals under noise ``sigma_t``."""
    return np.asarray(v, float) + 0.5 * sigma_t**2 * np.asarray(score, float)


def euler_maruyama_step(x, w, sigma_t, dt, rng=None, xi=None):
    """``x + dt w + sqrt(dt) sigma_t xi`` with ``xi ~ N(0, I)`` drawn from ``rng`` unless given."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, float)
    out = x + dt * np.asarray(w, float)
    if sigma_t == 0:
        return out
    if xi is None:
        xi = rng.standard_normal(x.shape)
    return out + np.sqrt(dt) * sigma_t * np.asarray(xi, float)


def drift(model, score_source, x, t, sigma_t, v=None):
    """Corrected drift at ``(x, t)``; returns the plain velocity when ``sigma_t == 0``."""
    if v is None:
        v = velocity_fn(model)(x, t)
    if sigma_t == 0:
        return v
    return corrected_drift(v, score_source(model, x, t, v), sigma_t)


def integrate_sde(model, score_source: ScoreSource, noise: NoiseSchedule, x0, n_steps, rng=None):
    """Euler-Maruyama on the uniform grid ``t_k = k / n_steps``; returns the terminal batch.

    Steps with ``sigma(t_k) == 0`` are plain Euler steps, so zero noise reproduces
    :func:`flowsteer.flow.integrate_ode` bit for bit.
    """
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError("n_steps must be a positive integer")
    rng = np.random.default_rng(rng)
    f = velocity_fn(model)
    x = as_batch(x0).copy()
    dt = 1.0 / n_steps
    for k in range(n_steps):
        t = k * dt
        sig = noise(t)
        w = drift(model, score_source, x, t, sig, v=f(x, t))
        x = euler_maruyama_step(x, w, sig, dt, rng)
        check_finite(x, f"SDE state at step {k + 1}")
    return x
