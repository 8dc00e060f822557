"""Command-line entry point: ``flowsteer {train,sample,steer,bench}``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _rng
from .config import describe, resolve, steering_config, train_config, validate
from .exceptions import (
    ConfigError,
    ContractViolationError,
    DegenerateEnsembleError,
    DegenerateGeometryError,
    NonFiniteError,
    SingularityError,
)
from .flow import integrate_ode, train_flow
from .mlp import VelocityModel
from .potentials import make_potential, read_chiral_centers
from .sde import NoiseSchedule, ScoreSource, integrate_sde
from .steering import fk_sample

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (NonFiniteError, DegenerateEnsembleError, SingularityError, DegenerateGeometryError,
                  ContractViolationError, FloatingPointError)

logger = logging.getLogger("flowsteer")

_HELP = {
    "train": "train a flow (and score head when data.sigma_b > 0); writes checkpoint.json and loss_trace.csv",
    "sample": "draw unsteered samples from a checkpoint; writes samples.csv",
    "steer": "draw one FK-steered ensemble from a checkpoint; writes samples.csv and diagnostics.csv",
    "bench": "run a benchmark suite; writes <suite>.csv, <suite>_long.csv, <suite>.json and <suite>_timing.csv",
}


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_points(path, x):
    d = x.shape[1]
    _write_csv(path, [f"x{i}" for i in range(d)], x.tolist())


def _read_points(path):
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2, skiprows=_header_rows(path)))
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from None
    except ValueError as err:
        raise ConfigError(f"{path} is not a numeric CSV: {err}") from None


def _header_rows(path):
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.strip().split(",")]
        return 0
    except ValueError:
        return 1


def _write_config(out, command, cfg, profile):
    (out / "config.json").write_text(json.dumps({"command": command, "profile": profile, "config": cfg},
                                                indent=1, sort_keys=True) + "\n")


# -- data and priors ---------------------------------------------------------------------


def _pair_sampler(data, sigma_b):
    from .bench import datasets as ds

    kind = data["kind"]
    if kind == "two_gaussian":
        return ds.two_gaussian_pair_sampler()
    if kind == "hypercube":
        return ds.gen_hypercube_pair_sampler(data["dim"], data["corner_std"])
    if kind == "chiral_toy":
        return ds.gen_chiral_toy_sampler()
    if kind == "twod":
        return ds.pair_sampler_2d(data["source"], data["target"])
    target = _read_points(data["target_csv"])
    source = _read_points(data["source_csv"]) if data["source_csv"] else None
    if source is not None and source.shape[1] != target.shape[1]:
        raise ConfigError("source_csv and target_csv have different dimensions")

    def sample(n, rng):
        x1 = target[rng.integers(0, len(target), n)]
        x0 = rng.standard_normal(x1.shape) if source is None else source[rng.integers(0, len(source), n)]
        return x0, x1

    sample.dim = target.shape[1]
    return sample


def _prior(spec, dim):
    from .bench import datasets as ds

    kind = spec["kind"]
    if kind == "normal":
        return lambda n, rng: rng.standard_normal((n, dim))
    if kind == "uniform_cube":
        return ds.hypercube_prior(dim)
    if kind == "twod":
        if dim != 2:
            raise ConfigError("prior.kind = twod needs a 2-D model")
        return ds.dataset_sampler(spec["name"])
    pts = _read_points(spec["csv"])
    if pts.shape[1] != dim:
        raise ConfigError(f"prior.csv has dimension {pts.shape[1]}, model has {dim}")
    return lambda n, rng: pts[rng.integers(0, len(pts), n)]


def _score_source(cfg, model):
    kind = cfg["score"]
    if kind == "auto":
        kind = "learned" if model.score_head else "analytic"
    if kind == "learned":
        if not model.score_head:
            raise ConfigError("score = learned, but the checkpoint has no score head")
        return ScoreSource.learned()
    return ScoreSource.analytic()


def _load_model(path):
    try:
        return VelocityModel.load(path)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint {path} does not exist") from None
    except (ValueError, KeyError) as err:
        raise ConfigError(f"checkpoint {path} is unreadable: {err}") from None


def _noise(cfg):
    n = cfg["noise"]
    return NoiseSchedule(n["kind"], n["sigma0"], n["sigma1"])


# -- commands ------------------------------------------------------------------------------


def cmd_train(cfg, out, profile):
    tcfg = train_config(cfg)
    sampler = _pair_sampler(cfg["data"], tcfg.sigma_b)
    result = train_flow(sampler, tcfg, dim=getattr(sampler, "dim", None))
    out.mkdir(parents=True, exist_ok=True)
    result.model.save(out / "checkpoint.json")
    _write_csv(out / "loss_trace.csv", ["step", "loss"], ((i + 1, v) for i, v in enumerate(result.loss_trace)))
    _write_config(out, "train", cfg, profile)
    logger.info("checkpoint sha256 %s, final loss %.5f", result.model.checksum(), result.loss_trace[-1])


def _prepare_model(cfg):
    model = _load_model(cfg["checkpoint"])
    prior = _prior(cfg["prior"], model.dim)
    noise = _noise(cfg)
    score = None if noise.is_zero else _score_source(cfg, model)
    if score is not None and cfg["prior"]["kind"] != "normal" and score.variant != "learned":
        raise ConfigError("stochastic sampling from a non-Gaussian prior needs a learned score head")
    return model, prior, noise, score


def cmd_sample(cfg, out, profile):
    model, prior, noise, score = _prepare_model(cfg)
    prior_rng, sde_rng = _rng.spawn(_rng.as_generator(cfg["seed"]), 2)
    x0 = prior(cfg["n_samples"], prior_rng)
    if score is None:
        x = integrate_ode(model, x0, cfg["n_steps"])[-1]
    else:
        x = integrate_sde(model, score, noise, x0, cfg["n_steps"], sde_rng)
    out.mkdir(parents=True, exist_ok=True)
    _write_points(out / "samples.csv", x)
    _write_config(out, "sample", cfg, profile)


def cmd_steer(cfg, out, profile):
    model, prior, noise, score = _prepare_model(cfg)
    steer = steering_config(cfg)
    if score is None and not steer.deterministic and not noise.is_zero:
        raise ConfigError("internal: missing score source")
    pot_cfg = cfg["potential"]
    if pot_cfg["kind"] == "chirality":
        try:
            centers = read_chiral_centers(pot_cfg["centers_csv"])
        except OSError as err:
            raise ConfigError(f"cannot read {pot_cfg['centers_csv']}: {err.strerror}") from None
        pot = make_potential("chirality", centers=centers)
    elif pot_cfg["kind"] == "half_plane":
        if not 0 <= pot_cfg["axis"] < model.dim:
            raise ConfigError(f"potential.axis must lie in [0, {model.dim})")
        pot = make_potential("half_plane", w=pot_cfg["w"], axis=pot_cfg["axis"])
    else:
        pot = make_potential(pot_cfg["kind"], w=pot_cfg["w"])
    res = fk_sample(model, pot, steer, noise, score, rng=cfg["seed"], prior=prior)
    out.mkdir(parents=True, exist_ok=True)
    _write_points(out / "samples.csv", res.samples)
    res.write_diagnostics(out / "diagnostics.csv")
    _write_config(out, "steer", cfg, profile)
    logger.info("telescoping residual %.3g, distinct ancestors %d", res.telescoping_residual, res.distinct_ancestors)


def cmd_bench(cfg, out, profile):
    from .bench.experiments import run_suite

    report, summary = run_suite(cfg["suite"], profile, cfg["params"], model_dir=cfg["model_dir"])
    report.write(out, summary)


COMMANDS = {"train": cmd_train, "sample": cmd_sample, "steer": cmd_steer, "bench": cmd_bench}


def build_parser():
    parser = argparse.ArgumentParser(prog="flowsteer", description="Flow matching with Feynman-Kac steering.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        epilog = "config keys (YAML, dotted = nested) and defaults:\n" + "\n".join(describe(name))
        p = sub.add_parser(name, help=_HELP[name], description=_HELP[name], epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="YAML config file; omitted keys take the defaults below")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out-dir", default=None, help=f"output directory (default: runs/{name})")
        p.add_argument("--profile", choices=("smoke", "paper"), default="smoke",
                       help="benchmark scale; bench reads suite defaults from it (default: smoke)")
        if name == "bench":
            p.add_argument("suite", nargs="?", default=None, help="overrides the config suite")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args.command, args.config, args.seed)
        if args.command == "bench" and args.suite is not None:
            cfg["suite"] = args.suite
            validate("bench", cfg)
        out = Path(args.out_dir or Path("runs") / args.command)
        COMMANDS[args.command](cfg, out, args.profile)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as err:
        print(f"numeric failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
