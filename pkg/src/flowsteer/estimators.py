"""scikit-learn style wrappers around the functional core.

``FlowMatchingSampler`` learns a flow from a source to the empirical
distribution of ``X``; ``SteeredSampler`` draws from that flow tilted by
``exp(-lam U)``.  Both follow the estimator conventions (constructor stores
hyperparameters verbatim, fitted state ends in an underscore), so they work
with ``clone``, ``get_params`` and ``set_params``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted

from . import _rng
from ._validation import check_samples
from .exceptions import ConfigError
from .flow import TrainConfig, integrate_ode, train_flow
from .sde import NoiseSchedule, ScoreSource, integrate_sde
from .steering import SteeringConfig, fk_sample


class FlowMatchingSampler(TransformerMixin, BaseEstimator):
    """Conditional flow matching from a source distribution to the rows of ``X``.

    The source is a standard normal unless ``fit`` receives ``X0``, in which case
    training pairs draw rows of ``X0`` and ``X`` independently (or OT-matched
    with ``coupling="minibatch_ot"``).  ``transform`` pushes source points
    through the learned ODE.
    """

    def __init__(
        self,
        hidden=(128, 128, 128, 128),
        activation="silu",
        n_iter=2000,
        batch_size=256,
        lr=1e-3,
        sigma_b=0.0,
        coupling="independent",
        n_integration_steps=50,
        random_state=0,
    ):
        self.hidden = hidden
        self.activation = activation
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.lr = lr
        self.sigma_b = sigma_b
        self.coupling = coupling
        self.n_integration_steps = n_integration_steps
        self.random_state = random_state

    def fit(self, X, y=None, X0=None):
        X = check_samples(X)
        d = X.shape[1]
        if X0 is not None:
            X0 = check_samples(X0, dim=d, name="X0")
        source = X0

        def pairs(n, rng):
            x1 = X[rng.integers(0, len(X), n)]
            x0 = rng.standard_normal((n, d)) if source is None else source[rng.integers(0, len(source), n)]
            return x0, x1

        cfg = TrainConfig(
            batch_size=self.batch_size, n_steps=self.n_iter, lr=self.lr, sigma_b=self.sigma_b,
            coupling=self.coupling, hidden=tuple(self.hidden), activation=self.activation,
            seed=_seed(self.random_state),
        )
        result = train_flow(pairs, cfg, dim=d)
        self.model_ = result.model
        self.loss_trace_ = result.loss_trace
        self.source_ = None if source is None else source.copy()
        self.n_features_in_ = d
        return self

    def sample_source(self, n, rng):
        check_is_fitted(self)
        if self.source_ is None:
            return rng.standard_normal((n, self.n_features_in_))
        return self.source_[rng.integers(0, len(self.source_), n)]

    def transform(self, X):
        check_is_fitted(self)
        X = check_samples(X, dim=self.n_features_in_)
        return integrate_ode(self.model_, X, self.n_integration_steps)[-1]

    def sample(self, n, random_state=None, noise=None):
        """``n`` draws from the learned distribution, by ODE or, with ``noise``, by the corrected SDE."""
        check_is_fitted(self)
        rng = _rng.as_generator(self.random_state if random_state is None else random_state)
        prior_rng, sde_rng = _rng.spawn(rng, 2)
        x0 = self.sample_source(n, prior_rng)
        if noise is None or noise.is_zero:
            return self.transform(x0)
        return integrate_sde(self.model_, self.score_source(), noise, x0, self.n_integration_steps, sde_rng)

    def score_source(self):
        if self.model_.score_head:
            return ScoreSource.learned()
        if self.source_ is not None:
            raise ConfigError("stochastic sampling from a non-Gaussian source needs sigma_b > 0 (a learned score)")
        return ScoreSource.analytic()


class SteeredSampler(BaseEstimator):
    """Feynman-Kac steering of a :class:`FlowMatchingSampler` toward low ``potential``.

    ``fit`` fits a clone of ``flow`` (skipped when ``flow`` is already fitted
    and ``refit_flow`` is False); ``sample`` runs independent particle
    ensembles of ``n_particles`` until ``n`` samples are collected.
    """

    def __init__(
        self,
        flow=None,
        potential=None,
        lam=1.0,
        schedule="harmonic_sum",
        n_particles=32,
        n_steps=50,
        resample_every=3,
        estimate_order="one_shot",
        deterministic=False,
        noise_sigma0=0.3,
        refit_flow=True,
        random_state=0,
    ):
        self.flow = flow
        self.potential = potential
        self.lam = lam
        self.schedule = schedule
        self.n_particles = n_particles
        self.n_steps = n_steps
        self.resample_every = resample_every
        self.estimate_order = estimate_order
        self.deterministic = deterministic
        self.noise_sigma0 = noise_sigma0
        self.refit_flow = refit_flow
        self.random_state = random_state

    def fit(self, X=None, y=None, **fit_params):
        if self.potential is None:
            raise ConfigError("a potential is required")
        flow = FlowMatchingSampler() if self.flow is None else self.flow
        if self.refit_flow or not _is_fitted(flow):
            if X is None:
                raise ValueError("X is required to fit the flow")
            flow = clone(flow).fit(X, **fit_params)
        self.flow_ = flow
        self.config_ = SteeringConfig(
            lam=self.lam, schedule=self.schedule, n_particles=self.n_particles, n_steps=self.n_steps,
            resample_every=self.resample_every, estimate_order=self.estimate_order,
            deterministic=self.deterministic,
        )
        self.n_features_in_ = flow.n_features_in_
        return self

    def sample(self, n, random_state=None):
        """``n`` steered samples, plus the per-ensemble diagnostics in ``last_results_``."""
        check_is_fitted(self)
        rng = _rng.as_generator(self.random_state if random_state is None else random_state)
        noise = NoiseSchedule("linear_decay", self.noise_sigma0)
        score = None if self.deterministic else self.flow_.score_source()
        n_runs = -(-n // self.n_particles)
        results = [
            fk_sample(self.flow_.model_, self.potential, self.config_, noise, score, rng=r, prior=self.flow_.sample_source)
            for r in _rng.spawn(rng, n_runs)
        ]
        self.last_results_ = results
        return np.vstack([r.samples for r in results])[:n]


def _is_fitted(est):
    return hasattr(est, "model_")


def _seed(random_state):
    if random_state is None:
        return 0
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    raise ConfigError("random_state must be an int so training is reproducible")
