"""Experiment drivers: hypercube scaling, 2D tilted datasets, two-Gaussian mode isolation and toy chirality.

Each driver takes a suite config (dataclass with ``smoke`` and ``paper``
profiles), trains or loads the models it needs, and returns a
:class:`BenchmarkReport`.  Every stochastic step draws from a stream keyed by
``(seed, *row key)`` so any single row can be rerun in isolation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .. import _rng
from ..exceptions import ConfigError
from ..flow import TrainConfig, integrate_ode, train_flow
from ..mlp import VelocityModel
from ..potentials import ChiralCenter, make_potential, signed_center_volumes, thresholded_chirality_error
from ..sde import NoiseSchedule, ScoreSource, integrate_sde
from ..steering import SteeringConfig, fk_sample, importance_sample, standard_normal_prior
from .datasets import (
    PAIRS_2D,
    chiral_toy_geometries,
    dataset_sampler,
    gen_chiral_toy_sampler,
    gen_hypercube_pair_sampler,
    hypercube_prior,
    pair_sampler_2d,
    two_gaussian_pair_sampler,
)
from .metrics import ProjectedReference, random_directions, sliced_w2, success_rate
from .report import BenchmarkReport, config_hash

logger = logging.getLogger(__name__)


# -- shared helpers ---------------------------------------------------------------


def load_or_train(tag, pair_sampler, train_cfg: TrainConfig, model_dir=None, dim=None):
    """Train a model, or load it from ``model_dir`` when a checkpoint for the same config exists."""
    path = None
    if model_dir is not None:
        path = Path(model_dir) / f"{tag}-{config_hash(asdict(train_cfg))}.json"
        if path.exists():
            return VelocityModel.load(path), 0.0
    t0 = time.perf_counter()
    model = train_flow(pair_sampler, train_cfg, dim=dim).model
    elapsed = time.perf_counter() - t0
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        model.save(path)
    return model, elapsed


def ess_summary(result):
    ess = np.array([row["ess"] for row in result.diagnostics])
    return {
        "ess_min": float(ess.min()),
        "ess_mean": float(ess.mean()),
        "ess_final": float(ess[-1]),
        "distinct_ancestors": result.distinct_ancestors,
    }


def marginal_check(model, prior, score_source, noise, n=4096, n_proj=4096, n_steps=50, rng=None, n_repeats=5):
    """Compare SDE batches against ODE batches, with independent ODE batches as the noise floor.

    If the corrected SDE preserves the flow's marginals, ``sde_ode`` should be no
    larger than the Monte Carlo spread ``ode_ode`` between two ODE batches.  Both
    distances are averaged over ``n_repeats`` fresh triples of batches because a
    single triple is dominated by sampling noise in the mode masses.
    """
    rng = _rng.as_generator(rng)
    dirs = random_directions(model.dim, n_proj, _rng.spawn(rng, 1)[0])
    pairs = []
    for rep_rng in _rng.spawn(rng, n_repeats):
        r_ode, r_ode2, r_sde, r_prior = _rng.spawn(rep_rng, 4)
        ode_a = integrate_ode(model, prior(n, r_ode), n_steps)[-1]
        ode_b = integrate_ode(model, prior(n, r_ode2), n_steps)[-1]
        sde = integrate_sde(model, score_source, noise, prior(n, r_prior), n_steps, r_sde)
        pairs.append((sliced_w2(sde, ode_a, directions=dirs), sliced_w2(ode_b, ode_a, directions=dirs)))
    sde_ode, ode_ode = np.mean(pairs, axis=0)
    ratios = [a / b for a, b in pairs]
    return {"sde_ode": float(sde_ode), "ode_ode": float(ode_ode), "ratio": float(sde_ode / ode_ode),
            "ratio_single_max": float(max(ratios)), "n_repeats": n_repeats}


def _noise(kind, sigma0, sigma1=0.0):
    return NoiseSchedule(kind, sigma0, sigma1)


def with_profile(cls, profile="smoke", **overrides):
    """Instantiate a suite config from a named profile plus explicit overrides."""
    try:
        base = dict(cls.PROFILES[profile])
    except KeyError:
        raise ConfigError(f"unknown profile {profile!r}; choose 'smoke' or 'paper'") from None
    base.update(overrides)
    return cls(**base)


def _tuple_fields(cfg):
    for f in fields(cfg):
        if isinstance(getattr(cfg, f.name), list):
            setattr(cfg, f.name, tuple(getattr(cfg, f.name)))


# -- two-Gaussian mode isolation -------------------------------------------------------


@dataclass
class TwoGaussianConfig:
    means: tuple = (-2.0, 2.0)
    std: float = 0.3
    train_steps: int = 3000
    batch_size: int = 256
    hidden: tuple = (64, 64, 64)
    lam: float = 5.0
    w: float = 1.0
    schedules: tuple = ("harmonic_sum",)
    n_particles: int = 512
    n_steps: int = 100
    resample_every: int = 5
    noise_sigma0: float = 0.3
    repeats: int = 3
    n_marginal: int = 4096
    marginal_repeats: int = 10
    n_proj: int = 4096
    seed: int = 0

    PROFILES = {"smoke": {}, "paper": {"train_steps": 6000, "repeats": 10,
                                       "schedules": ("difference", "max", "sum", "harmonic_sum")}}

    def __post_init__(self):
        _tuple_fields(self)


def run_two_gaussian(cfg: TwoGaussianConfig | None = None, model_dir=None) -> BenchmarkReport:
    """Tilt a symmetric 1D mixture toward its positive mode with a half-line potential."""
    cfg = cfg or TwoGaussianConfig()
    report = BenchmarkReport("two_gaussian", asdict(cfg))
    tcfg = TrainConfig(batch_size=cfg.batch_size, n_steps=cfg.train_steps, hidden=cfg.hidden,
                       seed=_rng.derive_seed(cfg.seed, 0))
    model, train_s = load_or_train("two_gaussian", two_gaussian_pair_sampler(cfg.means, cfg.std), tcfg, model_dir)
    report.extras["train_seconds"] = train_s
    pot = make_potential("half_plane", w=cfg.w, axis=0)
    noise = _noise("linear_decay", cfg.noise_sigma0)
    for rep in range(cfg.repeats):
        for si, sched in enumerate(cfg.schedules):
            for det in (False, True):
                key = (cfg.seed, 1, rep, si, int(det))
                steer = SteeringConfig(lam=cfg.lam, schedule=sched, n_particles=cfg.n_particles,
                                       n_steps=cfg.n_steps, resample_every=cfg.resample_every, deterministic=det)
                t0 = time.perf_counter()
                res = fk_sample(model, pot, steer, noise, ScoreSource.analytic(), rng=_rng.stream(*key))
                report.add(
                    dataset="two_gaussian", method="FK", schedule=sched, deterministic=det, repeat=rep,
                    seed=cfg.seed, seed_key="/".join(map(str, key)), S=cfg.n_particles,
                    mode_fraction=float(np.mean(res.samples[:, 0] > 0)),
                    distinct_samples=res.distinct_samples, telescoping_residual=res.telescoping_residual,
                    runtime_s=time.perf_counter() - t0, **ess_summary(res),
                )
        key = (cfg.seed, 2, rep)
        x = integrate_sde(model, ScoreSource.analytic(), noise,
                          np.random.default_rng(_rng.derive_seed(*key, 0)).standard_normal((cfg.n_particles, 1)),
                          cfg.n_steps, _rng.stream(*key))
        report.add(dataset="two_gaussian", method="unsteered", repeat=rep, seed=cfg.seed,
                   seed_key="/".join(map(str, key)), S=cfg.n_particles, mode_fraction=float(np.mean(x[:, 0] > 0)))
    mc = marginal_check(model, standard_normal_prior(1), ScoreSource.analytic(), noise, cfg.n_marginal,
                        cfg.n_proj, cfg.n_steps, _rng.stream(cfg.seed, 3), cfg.marginal_repeats)
    report.add(dataset="two_gaussian", method="marginal_check", seed=cfg.seed, seed_key=f"{cfg.seed}/3", **mc)
    return report


# -- hypercube ------------------------------------------------------------------------


@dataclass
class HypercubeConfig:
    dims: tuple = (2, 4, 6, 8)
    potentials: tuple = ("distance", "indicator")
    methods: tuple = ("FK", "IS")
    particle_sizes: tuple = (32,)
    n_steps: int = 50
    resample_every: int = 3
    repeats: int = 10
    lam: float = 1.0
    distance_w: float = 10.0
    indicator_w: float = 15.0
    schedule: str = "harmonic_sum"
    estimate_order: str = "one_shot"
    noise_kind: str = "constant"
    noise_sigma0: float = 2.0
    corner_std: float = 0.2
    sigma_b: float = 2.0
    batch_size: int = 512
    steps_per_dim: int = 500
    hidden: tuple = (128, 128, 128, 128)
    n_reference: int = 1024
    n_proj: int = 4096
    marginal_check: bool = True
    marginal_noise_sigma0: float = 0.3
    n_marginal: int = 4096
    marginal_repeats: int = 5
    seed: int = 0

    PROFILES = {"smoke": {}, "paper": {"steps_per_dim": 1000, "n_reference": 4096}}

    def __post_init__(self):
        _tuple_fields(self)
        if min(self.dims) < 1:
            raise ConfigError("dims must be positive")
        if np.exp(-self.lam * self.indicator_w) > 1e-6:
            logger.warning("indicator weight exp(-lam w) = %.2g is not in the hard-rejection regime",
                           np.exp(-self.lam * self.indicator_w))

    def train_config(self, d):
        return TrainConfig(batch_size=self.batch_size, n_steps=self.steps_per_dim * d, sigma_b=self.sigma_b,
                           hidden=self.hidden, seed=_rng.derive_seed(self.seed, d))


def hypercube_model(cfg: HypercubeConfig, d, model_dir=None):
    sampler = gen_hypercube_pair_sampler(d, cfg.corner_std)
    return load_or_train(f"hypercube_d{d}", sampler, cfg.train_config(d), model_dir, dim=d)


def run_hypercube_benchmark(cfg: HypercubeConfig | None = None, model_dir=None) -> BenchmarkReport:
    """FK vs IS on the uniform-to-corners problem, steering into the positive orthant."""
    cfg = cfg or HypercubeConfig()
    report = BenchmarkReport("hypercube", asdict(cfg))
    weights = {"distance": cfg.distance_w, "indicator": cfg.indicator_w}
    noise = _noise(cfg.noise_kind, cfg.noise_sigma0)
    score = ScoreSource.learned()
    for d in cfg.dims:
        model, train_s = hypercube_model(cfg, d, model_dir)
        report.extras[f"train_seconds_d{d}"] = train_s
        prior = hypercube_prior(d)
        ref_rng = _rng.stream(cfg.seed, d, 0)
        target = 2.0 + cfg.corner_std * ref_rng.standard_normal((cfg.n_reference, d))
        ref = ProjectedReference(target, cfg.n_proj, rng=_rng.stream(cfg.seed, d, 1))
        for rep in range(cfg.repeats):
            for pi, pot_name in enumerate(cfg.potentials):
                pot = make_potential(pot_name, w=weights[pot_name])
                for S in cfg.particle_sizes:
                    for mi, method in enumerate(cfg.methods):
                        key = (cfg.seed, d, 2, rep, pi, S, mi)
                        rng = _rng.stream(*key)
                        t0 = time.perf_counter()
                        if method == "FK":
                            steer = SteeringConfig(lam=cfg.lam, schedule=cfg.schedule, n_particles=S,
                                                   n_steps=cfg.n_steps, resample_every=cfg.resample_every,
                                                   estimate_order=cfg.estimate_order)
                            res = fk_sample(model, pot, steer, noise, score, rng=rng, prior=prior)
                            samples, extra = res.samples, ess_summary(res)
                        elif method == "IS":
                            res = importance_sample(model, pot, cfg.lam, S, cfg.n_steps, noise, score, rng, prior)
                            samples, extra = res.samples, {"ess_final": res.ess}
                        elif method == "unsteered":
                            samples = integrate_sde(model, score, noise, prior(S, rng), cfg.n_steps, rng)
                            extra = {}
                        else:
                            raise ConfigError(f"unknown method {method!r}")
                        report.add(
                            dimension=d, method=method, potential=pot_name, S=S, repeat=rep, seed=cfg.seed,
                            seed_key="/".join(map(str, key)), success_rate=success_rate(samples),
                            sliced_w2=ref.distance(samples), runtime_s=time.perf_counter() - t0, **extra,
                        )
        if cfg.marginal_check:
            mc = marginal_check(model, prior, score, _noise("linear_decay", cfg.marginal_noise_sigma0),
                                cfg.n_marginal, cfg.n_proj, cfg.n_steps, _rng.stream(cfg.seed, d, 3),
                                cfg.marginal_repeats)
            report.add(dimension=d, method="marginal_check", seed=cfg.seed, seed_key=f"{cfg.seed}/{d}/3", **mc)
    return report


# -- 2D datasets ----------------------------------------------------------------------


@dataclass
class TwoDConfig:
    pairs: tuple = PAIRS_2D
    model_kinds: tuple = ("cfm", "ot")
    train_steps: int = 4000
    batch_size: int = 256
    hidden: tuple = (128, 128, 128, 128)
    tilt_w: float = 4.0
    tilt_axis: int = 1
    lam: float = 1.0
    schedule: str = "harmonic_sum"
    n_particles: int = 128
    n_steps: int = 40
    resample_every: int = 10
    n_samples: int = 1024
    repeats: int = 10
    n_reference: int = 4096
    n_proj: int = 1024
    sanity_lambda0: bool = True
    seed: int = 0

    PROFILES = {"smoke": {}, "paper": {"train_steps": 10000, "n_proj": 4096, "n_reference": 8192}}

    def __post_init__(self):
        self.pairs = tuple(tuple(p) for p in self.pairs)
        _tuple_fields(self)
        if self.n_samples % self.n_particles:
            raise ConfigError("n_samples must be a multiple of n_particles")


def tilted_reference(sampler, potential, lam, n, rng, batch=65536):
    """Rejection samples from ``p(x) exp(-lam U(x))`` for a non-negative ``U``."""
    out, have = [], 0
    for _ in range(1000):
        x = sampler(batch, rng)
        keep = x[rng.random(batch) < np.exp(-lam * potential(x))]
        out.append(keep)
        have += len(keep)
        if have >= n:
            return np.vstack(out)[:n]
    raise RuntimeError("rejection sampler acceptance too low")


def run_2d_benchmark(cfg: TwoDConfig | None = None, model_dir=None) -> BenchmarkReport:
    """Deterministic FK on 2D flows with a half-plane tilt, scored by sliced-W2 to rejection samples."""
    cfg = cfg or TwoDConfig()
    report = BenchmarkReport("twod", asdict(cfg))
    pot = make_potential("half_plane", w=cfg.tilt_w, axis=cfg.tilt_axis)
    groups = cfg.n_samples // cfg.n_particles
    for ii, (src, tgt) in enumerate(cfg.pairs):
        source, target = dataset_sampler(src), dataset_sampler(tgt)
        ref_rng = _rng.stream(cfg.seed, ii, 0)
        ref_tilted = ProjectedReference(tilted_reference(target, pot, cfg.lam, cfg.n_reference, ref_rng),
                                        cfg.n_proj, rng=_rng.stream(cfg.seed, ii, 1))
        ref_plain = ProjectedReference(target(cfg.n_reference, ref_rng), directions=ref_tilted.directions)
        dataset = f"{src}->{tgt}"
        for ki, kind in enumerate(cfg.model_kinds):
            tcfg = TrainConfig(batch_size=cfg.batch_size, n_steps=cfg.train_steps, hidden=cfg.hidden,
                               coupling="minibatch_ot" if kind == "ot" else "independent",
                               seed=_rng.derive_seed(cfg.seed, ii, ki))
            model, train_s = load_or_train(f"twod_{src}_{tgt}_{kind}", pair_sampler_2d(src, tgt), tcfg, model_dir)
            report.extras[f"train_seconds_{dataset}_{kind}"] = train_s
            lams = [("FK", cfg.lam)] + ([("FK_lambda0", 0.0)] if cfg.sanity_lambda0 else [])
            for rep in range(cfg.repeats):
                for mi, (method, lam) in enumerate(lams):
                    key = (cfg.seed, ii, 2, ki, rep, mi)
                    steer = SteeringConfig(lam=lam, schedule=cfg.schedule, n_particles=cfg.n_particles,
                                           n_steps=cfg.n_steps, resample_every=cfg.resample_every,
                                           deterministic=True)
                    t0 = time.perf_counter()
                    batches, diags = [], []
                    for g, rng in enumerate(_rng.spawn(_rng.stream(*key), groups)):
                        res = fk_sample(model, pot, steer, rng=rng, prior=source)
                        batches.append(res.samples)
                        diags.append(ess_summary(res))
                    x = np.vstack(batches)
                    report.add(
                        dataset=dataset, model=kind, method=method, lam=lam, S=cfg.n_particles, repeat=rep,
                        seed=cfg.seed, seed_key="/".join(map(str, key)),
                        sliced_w2=ref_tilted.distance(x), sliced_w2_untilted=ref_plain.distance(x),
                        ess_min=min(d["ess_min"] for d in diags),
                        ess_mean=float(np.mean([d["ess_mean"] for d in diags])),
                        runtime_s=time.perf_counter() - t0,
                    )
                key = (cfg.seed, ii, 3, ki, rep)
                rng = _rng.stream(*key)
                t0 = time.perf_counter()
                x = integrate_ode(model, source(cfg.n_samples, rng), cfg.n_steps)[-1]
                report.add(
                    dataset=dataset, model=kind, method="unsteered", lam=0.0, repeat=rep, seed=cfg.seed,
                    seed_key="/".join(map(str, key)), sliced_w2=ref_tilted.distance(x),
                    sliced_w2_untilted=ref_plain.distance(x), runtime_s=time.perf_counter() - t0,
                )
    return report


# -- toy chirality --------------------------------------------------------------------


@dataclass
class ChiralConfig:
    handedness: str = "R"
    train_steps: int = 12000
    batch_size: int = 256
    hidden: tuple = (128, 128, 128, 128)
    lam: float | None = None
    target_weight: float = 1e-8
    schedule: str = "harmonic_sum"
    n_particles: int = 128
    n_steps: int = 50
    resample_every: int = 5
    noise_sigma0: float = 0.3
    n_samples: int = 512
    repeats: int = 5
    n_unsteered: int = 1024
    n_tune: int = 4096
    theta: float = 0.25
    n_marginal: int = 4096
    marginal_repeats: int = 5
    n_proj: int = 4096
    seed: int = 0

    PROFILES = {"smoke": {}, "paper": {"train_steps": 20000, "repeats": 10}}

    def __post_init__(self):
        _tuple_fields(self)
        if self.handedness not in ("R", "S"):
            raise ConfigError("handedness must be 'R' or 'S'")
        if self.n_samples % self.n_particles:
            raise ConfigError("n_samples must be a multiple of n_particles")
        if not 0.0 < self.target_weight < 1.0:
            raise ConfigError("target_weight must lie in (0, 1)")


def tune_lambda(energies, target_weight):
    """``lam`` with ``exp(-lam * median U) = target_weight`` over the samples that carry energy."""
    positive = np.asarray(energies)[np.asarray(energies) > 0]
    if positive.size == 0:
        raise ValueError("no sample carries positive energy; nothing to steer away from")
    return float(np.log(1.0 / target_weight) / np.median(positive))


def run_chiral_benchmark(cfg: ChiralConfig | None = None, model_dir=None) -> BenchmarkReport:
    """Steer a toy stereocentre model toward one handedness and count correct signs."""
    cfg = cfg or ChiralConfig()
    report = BenchmarkReport("chiral", asdict(cfg))
    tcfg = TrainConfig(batch_size=cfg.batch_size, n_steps=cfg.train_steps, hidden=cfg.hidden,
                       seed=_rng.derive_seed(cfg.seed, 0))
    model, train_s = load_or_train("chiral", gen_chiral_toy_sampler(), tcfg, model_dir)
    report.extras["train_seconds"] = train_s
    centers = [ChiralCenter((1, 2, 3, 4), cfg.handedness)]
    pot = make_potential("chirality", centers=centers)
    noise = _noise("linear_decay", cfg.noise_sigma0)
    score = ScoreSource.analytic()
    prior = standard_normal_prior(15)

    tune = integrate_ode(model, prior(cfg.n_tune, _rng.stream(cfg.seed, 1)), cfg.n_steps)[-1]
    lam = tune_lambda(pot(tune), cfg.target_weight) if cfg.lam is None else float(cfg.lam)
    report.extras["lam"] = lam
    report.extras["lam_tuned"] = cfg.lam is None
    data = chiral_toy_geometries(cfg.n_unsteered, _rng.stream(cfg.seed, 2))[0]
    report.extras["data_correct_fraction"] = _correct_fraction(data, centers)

    def add(method, x, key, lam_used, t0, extra=None):
        report.add(
            method=method, lam=lam_used, repeat=key[-1], seed=cfg.seed, seed_key="/".join(map(str, key)),
            n=len(x), correct_fraction=_correct_fraction(x, centers),
            thresholded_error_rate=float(np.mean([thresholded_chirality_error(g, centers, cfg.theta) for g in x])),
            runtime_s=time.perf_counter() - t0, **(extra or {}),
        )

    groups = cfg.n_samples // cfg.n_particles
    for rep in range(cfg.repeats):
        key = (cfg.seed, 3, rep)
        t0 = time.perf_counter()
        rng = _rng.stream(*key)
        x = integrate_sde(model, score, noise, prior(cfg.n_unsteered, rng), cfg.n_steps, rng)
        add("unsteered", x, key, 0.0, t0)
        for mi, (method, lam_used) in enumerate((("FK", lam), ("FK_lambda0", 0.0))):
            key = (cfg.seed, 4 + mi, rep)
            steer = SteeringConfig(lam=lam_used, schedule=cfg.schedule, n_particles=cfg.n_particles,
                                   n_steps=cfg.n_steps, resample_every=cfg.resample_every)
            t0 = time.perf_counter()
            runs = [fk_sample(model, pot, steer, noise, score, rng=r) for r in _rng.spawn(_rng.stream(*key), groups)]
            x = np.vstack([r.samples for r in runs])
            add(method, x, key, lam_used, t0, {
                "ess_min": min(float(min(d["ess"] for d in r.diagnostics)) for r in runs),
                "telescoping_residual": max(r.telescoping_residual for r in runs),
            })
    mc = marginal_check(model, prior, score, noise, cfg.n_marginal, cfg.n_proj, cfg.n_steps,
                        _rng.stream(cfg.seed, 6), cfg.marginal_repeats)
    report.add(method="marginal_check", seed=cfg.seed, seed_key=f"{cfg.seed}/6", **mc)
    return report


def _correct_fraction(x, centers):
    """Fraction of geometries where every centre's signed volume has its labelled handedness."""
    return float(np.mean(np.all(signed_center_volumes(x, centers) < 0, axis=1)))


# -- registry -------------------------------------------------------------------------

SUITES = {
    "two_gaussian": (TwoGaussianConfig, run_two_gaussian, ("method", "schedule", "deterministic"),
                     ("mode_fraction", "distinct_ancestors", "distinct_samples", "ratio")),
    "hypercube": (HypercubeConfig, run_hypercube_benchmark, ("dimension", "potential", "method", "S"),
                  ("success_rate", "sliced_w2", "ess_min", "ratio")),
    "twod": (TwoDConfig, run_2d_benchmark, ("dataset", "model", "method"), ("sliced_w2", "sliced_w2_untilted")),
    "chiral": (ChiralConfig, run_chiral_benchmark, ("method",), ("correct_fraction", "thresholded_error_rate", "ratio")),
}


def suite_defaults(name, profile="smoke"):
    cls = SUITES[name][0]
    return asdict(with_profile(cls, profile))


def run_suite(name, profile="smoke", overrides=None, model_dir=None):
    """Run a named suite; returns the report and its median/quartile summary."""
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    cls, fn, group_by, metrics = SUITES[name]
    try:
        cfg = with_profile(cls, profile, **(overrides or {}))
    except TypeError as err:
        raise ConfigError(str(err)) from None
    report = fn(cfg, model_dir=model_dir)
    return report, report.summary(group_by, metrics)
