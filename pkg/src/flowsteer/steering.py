"""Feynman-Kac steering of flow-matching inference.

A population of particles is propagated with the flow ODE or the
marginal-preserving SDE.  At resampling events each particle's terminal reward
is estimated, converted into a potential ``G`` by a schedule, and the
population is resampled in proportion to ``G``.  The schedules are arranged so
that the product of all potentials along a path equals ``exp(-lam U(x_final))``,
which makes the terminal population target ``p_1(x) exp(-lam U(x))``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields

import numpy as np

from . import _rng
from ._validation import as_batch, check_finite
from .exceptions import ConfigError, ContractViolationError, DegenerateEnsembleError
from .flow import velocity_fn
from .sde import NoiseSchedule, ScoreSource, drift, euler_maruyama_step, integrate_sde

SCHEDULE_KINDS = ("difference", "max", "sum", "harmonic_sum")
ESTIMATE_ORDERS = ("zeroth", "one_shot", "second_order")
RESAMPLERS = ("multinomial", "systematic")


@dataclass
class SteeringConfig:
    lam: float = 1.0
    schedule: str = "harmonic_sum"
    n_particles: int = 32
    n_steps: int = 50
    resample_every: int = 3
    estimate_order: str = "one_shot"
    deterministic: bool = False
    resampler: str = "multinomial"

    def __post_init__(self):
        if self.schedule not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULE_KINDS}")
        if self.estimate_order not in ESTIMATE_ORDERS:
            raise ConfigError(f"unknown estimate order {self.estimate_order!r}")
        if self.resampler not in RESAMPLERS:
            raise ConfigError(f"unknown resampler {self.resampler!r}")
        if self.n_particles < 1 or self.n_steps < 1 or self.resample_every < 1:
            raise ConfigError("n_particles, n_steps and resample_every must be positive")
        if self.resample_every > self.n_steps:
            raise ConfigError("resample_every cannot exceed n_steps")
        if not np.isfinite(self.lam):
            raise ConfigError("lam must be finite")

    def event_steps(self):
        """Integration steps after which weights are computed and particles resampled.

        Every ``resample_every``-th step, plus always the last step (t = 1) so the
        potentials telescope to the true terminal energy.
        """
        steps = list(range(self.resample_every, self.n_steps + 1, self.resample_every))
        if not steps or steps[-1] != self.n_steps:
            steps.append(self.n_steps)
        return steps


# -- terminal reward estimates ----------------------------------------------------


def one_shot_terminal_estimate(x, v, t, horizon=None):
    """Single Euler extrapolation ``x + (1 - t) v`` to t = 1.

    ``horizon`` overrides ``1 - t``, e.g. ``1 - t - dt`` when the velocity was
    evaluated before a step of size ``dt``.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    h = 1.0 - t if horizon is None else horizon
    return np.asarray(x, float) + h * np.asarray(v, float)


def second_order_terminal_estimate(x, v, v_prev, t, t_prev, ode_step=True):
    """``x + (1-t) v + (1-t)^2 / (2 (t - t_prev)) (v - v_prev)``.

    Only valid when the step from ``t_prev`` to ``t`` injected no noise.
    """
    if not ode_step:
        raise ContractViolationError("second-order estimate needs the previous step to be an ODE step")
    if not t_prev < t:
        raise ValueError(f"need t_prev < t, got {t_prev} >= {t}")
    h = 1.0 - t
    v = np.asarray(v, float)
    return np.asarray(x, float) + h * v + (h * h / (2.0 * (t - t_prev))) * (v - np.asarray(v_prev, float))


# -- potential schedules ------------------------------------------------------------


def harmonic_factors(n_events):
    """Per-event reward scaling ``1 / ((L + 1 - l) H_L)`` for ``l = 1..L``; sums to 1."""
    L = int(n_events)
    denom = L + 1 - np.arange(1, L + 1)
    return 1.0 / (denom * np.sum(1.0 / denom))


def _scaled(kind, history, n_events):
    if kind == "harmonic_sum":
        return history * harmonic_factors(n_events)[: history.shape[-1]]
    return history


def _running_log_potentials(kind, lam, history, n_events):
    """``log G_j`` of the non-terminal form for every event ``j`` in ``history`` (last axis)."""
    r = _scaled(kind, history, n_events)
    if kind == "difference":
        prev = np.concatenate([np.zeros_like(r[..., :1]), r[..., :-1]], axis=-1)
        return -lam * (r - prev)
    if kind == "max":
        return -lam * np.maximum.accumulate(r, axis=-1)
    return -lam * np.cumsum(r, axis=-1)


def schedule_log_weights(kind, lam, history, n_events, final_energy=None):
    """Log potential emitted at the latest event of ``history`` (shape ``(S, j+1)``).

    ``history`` holds raw reward estimates ``U(y_l)``, one column per event so far.
    Pass ``final_energy`` at the terminal event: ``max``/``sum``/``harmonic_sum``
    then emit the correction ``-lam U - sum(previous log G)``.  ``difference``
    needs no correction because its terminal reward is ``U(x_final)`` itself.
    """
    if kind not in SCHEDULE_KINDS:
        raise ConfigError(f"unknown schedule {kind!r}")
    history = np.asarray(history, float)
    if history.shape[-1] < 1:
        raise ValueError("reward history is empty")
    if lam == 0:
        return np.zeros(history.shape[:-1])
    if final_energy is None or kind == "difference":
        return _running_log_potentials(kind, lam, history, n_events)[..., -1]
    earlier = _running_log_potentials(kind, lam, history[..., :-1], n_events)
    return -lam * np.asarray(final_energy, float) - earlier.sum(axis=-1)


def schedule_weight(kind, lam, history, step_index, n_events, final_energy=None):
    """Scalar potential ``G`` for one particle at event ``step_index`` (0-based)."""
    hist = np.asarray(history, float)[: step_index + 1]
    return float(np.exp(schedule_log_weights(kind, lam, hist[None, :], n_events, final_energy)[0]))


# -- resampling -------------------------------------------------------------------


def normalize_log_weights(log_w):
    """Exponentiate after subtracting the max; raises if every weight vanishes."""
    log_w = np.asarray(log_w, float)
    if np.any(np.isnan(log_w)) or np.any(log_w == np.inf):
        raise DegenerateEnsembleError("NaN or +inf log-weight")
    m = np.max(log_w)
    if not np.isfinite(m):
        raise DegenerateEnsembleError("all weights are zero")
    return np.exp(log_w - m)


def _check_weights(weights):
    w = np.asarray(weights, float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-D array")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DegenerateEnsembleError("weights must be finite and non-negative")
    total = w.sum()
    if not total > 0:
        raise DegenerateEnsembleError("all weights are zero")
    return w / total


def multinomial_resample(weights, rng, n=None):
    """``n`` (default ``len(weights)``) i.i.d. categorical draws proportional to ``weights``."""
    p = _check_weights(weights)
    n = p.size if n is None else n
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    return np.minimum(idx, p.size - 1)


def systematic_resample(weights, rng, n=None):
    """Low-variance resampling with a single uniform offset."""
    p = _check_weights(weights)
    n = p.size if n is None else n
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(cdf, u, side="right"), p.size - 1)


def effective_sample_size(weights):
    """``(sum w)^2 / sum w^2``.

    Weights are divided by their maximum first, so equal weights give exactly ``S``.
    """
    w = np.asarray(weights, float)
    w = w / w.max()
    return float(w.sum() ** 2 / np.sum(w * w))


# -- the particle system ------------------------------------------------------------


@dataclass
class ParticleEnsemble:
    """Per-particle state carried through resampling.

    Slot ``s`` keeps its own noise stream ``streams[s]``; everything else is copied
    from the donor particle when slot ``s`` is overwritten by resampling.
    """

    x: np.ndarray
    v: np.ndarray
    v_prev: np.ndarray
    rewards: np.ndarray
    log_weight_product: np.ndarray
    ancestor: np.ndarray
    streams: list
    lineage: list = field(default_factory=list)

    @classmethod
    def start(cls, x0, v0, streams):
        S = x0.shape[0]
        return cls(
            x=x0, v=v0, v_prev=v0.copy(), rewards=np.empty((S, 0)),
            log_weight_product=np.zeros(S), ancestor=np.arange(S), streams=streams,
        )

    @property
    def size(self):
        return self.x.shape[0]

    @property
    def prev_reward(self):
        return self.rewards[:, -1] if self.rewards.shape[1] else np.zeros(self.size)

    def noise(self):
        return np.stack([g.standard_normal(self.x.shape[1]) for g in self.streams])

    def take(self, idx):
        for name in ("x", "v", "v_prev", "rewards", "log_weight_product", "ancestor"):
            setattr(self, name, getattr(self, name)[idx])
        self.lineage.append(np.asarray(idx))

    def distinct_ancestors(self):
        return int(np.unique(self.ancestor).size)


DIAGNOSTIC_COLUMNS = (
    "step", "t", "ess", "distinct_ancestors", "reward_min", "reward_median", "reward_max",
)


@dataclass
class FKResult:
    samples: np.ndarray
    energies: np.ndarray
    ancestors: np.ndarray
    log_weight_products: np.ndarray
    lam: float
    diagnostics: list[dict]

    @property
    def telescoping_residual(self):
        """Max over survivors of ``|sum log G + lam U(x_final)|``."""
        return float(np.max(np.abs(self.log_weight_products + self.lam * self.energies)))

    @property
    def distinct_ancestors(self):
        return int(np.unique(self.ancestors).size)

    @property
    def distinct_samples(self):
        return int(np.unique(self.samples, axis=0).shape[0])

    def write_diagnostics(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=DIAGNOSTIC_COLUMNS)
            w.writeheader()
            for row in self.diagnostics:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def standard_normal_prior(dim):
    def sample(n, rng):
        return rng.standard_normal((n, dim))

    return sample


def _estimate(order, x, v, v_prev, t, t_prev, ode_step, final):
    if final or order == "zeroth":
        return x
    if order == "one_shot":
        return one_shot_terminal_estimate(x, v, t)
    return second_order_terminal_estimate(x, v, v_prev, t, t_prev, ode_step)


def fk_sample(
    model,
    potential,
    cfg: SteeringConfig,
    noise: NoiseSchedule | None = None,
    score_source: ScoreSource | None = None,
    rng=None,
    prior=None,
    x0=None,
) -> FKResult:
    """Draw ``cfg.n_particles`` samples approximately from ``p_1(x) exp(-lam U(x))``.

    ``prior(n, rng)`` samples the source distribution (standard normal of the
    model's dimension by default); ``x0`` fixes the initial particles instead.
    Each step propagates (Euler for the ODE, Euler-Maruyama with the corrected
    drift otherwise), refreshes the velocity at the new state, and at event steps
    estimates terminal rewards, emits potentials and resamples.
    """
    rng = _rng.as_generator(rng)
    prior_rng, resample_rng, stream_rng = _rng.spawn(rng, 3)
    S, K = cfg.n_particles, cfg.n_steps
    noise = NoiseSchedule.zero() if noise is None else noise
    score_source = ScoreSource.analytic() if score_source is None else score_source
    f = velocity_fn(model)
    if x0 is None:
        prior = standard_normal_prior(model.dim) if prior is None else prior
        x0 = prior(S, prior_rng)
    x0 = as_batch(x0)
    if x0.shape[0] != S:
        raise ValueError(f"x0 has {x0.shape[0]} particles, config asks for {S}")
    resample = multinomial_resample if cfg.resampler == "multinomial" else systematic_resample

    ens = ParticleEnsemble.start(x0, f(x0, 0.0), _rng.spawn(stream_rng, S))
    events = set(cfg.event_steps())
    L = len(events)
    dt = 1.0 / K
    diagnostics = []
    for k in range(K):
        t = k * dt
        sig = 0.0 if cfg.deterministic else noise(t)
        w = drift(model, score_source, ens.x, t, sig, v=ens.v)
        ens.x = euler_maruyama_step(ens.x, w, sig, dt, xi=ens.noise() if sig else None)
        check_finite(ens.x, f"particle state at step {k + 1}")
        final = k + 1 == K
        t_new = 1.0 if final else (k + 1) * dt
        ens.v_prev = ens.v
        if not final:
            ens.v = f(ens.x, t_new)
        if k + 1 not in events:
            continue

        y = _estimate(cfg.estimate_order, ens.x, ens.v, ens.v_prev, t_new, t, sig == 0, final)
        r = np.asarray(potential(y), float)
        ens.rewards = np.column_stack([ens.rewards, r])
        energy = r if final else None
        log_g = schedule_log_weights(cfg.schedule, cfg.lam, ens.rewards, L, final_energy=energy)
        weights = normalize_log_weights(log_g)
        ens.log_weight_product = ens.log_weight_product + log_g
        ess = effective_sample_size(weights)
        ens.take(resample(weights, resample_rng))
        diagnostics.append({
            "step": k + 1, "t": t_new, "ess": ess, "distinct_ancestors": ens.distinct_ancestors(),
            "reward_min": float(r.min()), "reward_median": float(np.median(r)), "reward_max": float(r.max()),
        })

    energies = np.asarray(potential(ens.x), float)
    return FKResult(
        samples=ens.x, energies=energies, ancestors=ens.ancestor,
        log_weight_products=ens.log_weight_product, lam=cfg.lam, diagnostics=diagnostics,
    )


@dataclass
class ISResult:
    samples: np.ndarray
    proposals: np.ndarray
    indices: np.ndarray
    ess: float


def importance_sample(
    model, potential, lam, n, n_steps=50, noise=None, score_source=None, rng=None, prior=None, x0=None
) -> ISResult:
    """Unsteered samples reweighted by ``exp(-lam U)`` and multinomially resampled."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = _rng.as_generator(rng)
    prior_rng, sde_rng, resample_rng = _rng.spawn(rng, 3)
    noise = NoiseSchedule.zero() if noise is None else noise
    score_source = ScoreSource.analytic() if score_source is None else score_source
    if x0 is None:
        prior = standard_normal_prior(model.dim) if prior is None else prior
        x0 = prior(n, prior_rng)
    x1 = integrate_sde(model, score_source, noise, x0, n_steps, sde_rng)
    weights = normalize_log_weights(-lam * np.asarray(potential(x1), float))
    idx = multinomial_resample(weights, resample_rng)
    return ISResult(samples=x1[idx], proposals=x1, indices=idx, ess=effective_sample_size(weights))


def config_fields():
    return {f.name: f.default for f in fields(SteeringConfig)}
