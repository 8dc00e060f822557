"""Run configuration documents for the command-line tool.

A config is a YAML mapping.  Each command has a schema of nested defaults;
user documents are merged into it, unknown keys are rejected and every leaf is
type-checked against its default before anything runs.
"""

from __future__ import annotations

import copy
from dataclasses import fields
from pathlib import Path

import yaml

from .exceptions import ConfigError
from .flow import TrainConfig
from .sde import NOISE_KINDS
from .steering import SteeringConfig

_TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name not in ("seed", "log_every")]

DATA_KINDS = ("two_gaussian", "hypercube", "chiral_toy", "twod", "csv")
PRIOR_KINDS = ("normal", "uniform_cube", "twod", "csv")
POTENTIAL_KINDS = ("distance", "indicator", "half_plane", "chirality")
SCORE_KINDS = ("auto", "analytic", "learned")


def _dataclass_defaults(cls, keys):
    out = {}
    for f in fields(cls):
        if f.name in keys:
            v = f.default
            out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _prior_schema():
    return {"kind": "normal", "name": None, "csv": None}


SCHEMAS = {
    "train": {
        "data": {
            "kind": "two_gaussian",
            "dim": 2,
            "corner_std": 0.2,
            "source": "eight_gaussians",
            "target": "moons",
            "source_csv": None,
            "target_csv": None,
        },
        "train": _dataclass_defaults(TrainConfig, _TRAIN_KEYS),
        "seed": 0,
    },
    "sample": {
        "checkpoint": None,
        "prior": _prior_schema(),
        "n_samples": 1024,
        "n_steps": 50,
        "noise": {"kind": "linear_decay", "sigma0": 0.0, "sigma1": 0.0},
        "score": "auto",
        "seed": 0,
    },
    "steer": {
        "checkpoint": None,
        "prior": _prior_schema(),
        "potential": {"kind": "distance", "w": 1.0, "axis": 1, "centers_csv": None},
        "steering": _dataclass_defaults(SteeringConfig, [f.name for f in fields(SteeringConfig)]),
        "noise": {"kind": "linear_decay", "sigma0": 0.3, "sigma1": 0.0},
        "score": "auto",
        "seed": 0,
    },
    "bench": {
        "suite": "two_gaussian",
        "model_dir": None,
        "params": {},
    },
}

# keys whose value may be a string path or null
_OPTIONAL_STR = {"checkpoint", "name", "csv", "source_csv", "target_csv", "centers_csv", "model_dir"}
_OPTIONAL_BOOL = {"score_head"}


def _check_leaf(path, key, default, value):
    where = ".".join(path)
    if key in _OPTIONAL_STR:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{where} must be a string or null")
        return value
    if key in _OPTIONAL_BOOL:
        if value is not None and not isinstance(value, bool):
            raise ConfigError(f"{where} must be true, false or null")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or any(isinstance(v, (dict, list)) for v in value):
            raise ConfigError(f"{where} must be a flat list")
        return value
    return value


def merge(schema, doc, path=()):
    """Overlay ``doc`` on a deep copy of ``schema``; rejects unknown keys and wrong types."""
    if doc is None:
        return copy.deepcopy(schema)
    if not isinstance(doc, dict):
        raise ConfigError(f"{'.'.join(path) or 'config'} must be a mapping")
    unknown = sorted(set(doc) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join('.'.join((*path, k)) for k in unknown)}")
    out = copy.deepcopy(schema)
    for key, value in doc.items():
        default = schema[key]
        if isinstance(default, dict) and default:
            out[key] = merge(default, value, (*path, key))
        elif isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join((*path, key))} must be a mapping")
            out[key] = value
        else:
            out[key] = _check_leaf((*path, key), key, default, value)
    return out


def load_document(path):
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"config {path} is not valid YAML: {err}") from None
    return {} if doc is None else doc


def _choice(value, options, where):
    if value not in options:
        raise ConfigError(f"{where} must be one of {options}, got {value!r}")


def resolve(command, path=None, seed=None):
    """Load, merge and validate the config for ``command``; ``seed`` overrides the document's seed."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    cfg = merge(SCHEMAS[command], load_document(path))
    if seed is not None:
        if command == "bench":
            cfg["params"]["seed"] = int(seed)
        else:
            cfg["seed"] = int(seed)
    validate(command, cfg)
    return cfg


def validate(command, cfg):
    if command == "train":
        data = cfg["data"]
        _choice(data["kind"], DATA_KINDS, "data.kind")
        if data["kind"] == "csv" and not data["target_csv"]:
            raise ConfigError("data.kind = csv needs data.target_csv")
        if data["dim"] < 1 or data["corner_std"] <= 0:
            raise ConfigError("data.dim must be positive and data.corner_std > 0")
        train_config(cfg)
    elif command in ("sample", "steer"):
        if not cfg["checkpoint"]:
            raise ConfigError("checkpoint is required")
        prior = cfg["prior"]
        _choice(prior["kind"], PRIOR_KINDS, "prior.kind")
        if prior["kind"] == "twod" and not prior["name"]:
            raise ConfigError("prior.kind = twod needs prior.name")
        if prior["kind"] == "csv" and not prior["csv"]:
            raise ConfigError("prior.kind = csv needs prior.csv")
        _choice(cfg["noise"]["kind"], NOISE_KINDS, "noise.kind")
        if cfg["noise"]["sigma0"] < 0 or cfg["noise"]["sigma1"] < 0:
            raise ConfigError("noise levels must be non-negative")
        _choice(cfg["score"], SCORE_KINDS, "score")
        if command == "sample":
            if cfg["n_samples"] < 1 or cfg["n_steps"] < 1:
                raise ConfigError("n_samples and n_steps must be positive")
        else:
            pot = cfg["potential"]
            _choice(pot["kind"], POTENTIAL_KINDS, "potential.kind")
            if pot["kind"] == "chirality" and not pot["centers_csv"]:
                raise ConfigError("potential.kind = chirality needs potential.centers_csv")
            steering_config(cfg)
    elif command == "bench":
        from .bench.experiments import SUITES, with_profile

        _choice(cfg["suite"], tuple(SUITES), "suite")
        cls = SUITES[cfg["suite"]][0]
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(cfg["params"]) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s) {', '.join('params.' + k for k in unknown)}")
        try:
            with_profile(cls, "smoke", **cfg["params"])
        except (TypeError, ValueError) as err:
            raise ConfigError(f"invalid bench params: {err}") from None


def train_config(cfg) -> TrainConfig:
    return TrainConfig(**cfg["train"], seed=cfg["seed"])


def steering_config(cfg) -> SteeringConfig:
    return SteeringConfig(**cfg["steering"])


def describe(command, profile="smoke"):
    """Lines ``key = default`` for every config key of ``command``, for ``--help``."""
    lines = []

    def walk(node, prefix):
        for key, value in node.items():
            name = f"{prefix}{key}"
            if isinstance(value, dict) and value:
                walk(value, name + ".")
            else:
                lines.append(f"  {name} = {yaml.safe_dump(value, default_flow_style=True).strip().removesuffix('...').strip()}")

    walk(SCHEMAS[command], "")
    if command == "bench":
        from .bench.experiments import SUITES, suite_defaults

        for suite in SUITES:
            lines.append(f"  params for suite {suite} ({profile} profile):")
            for key, value in suite_defaults(suite, profile).items():
                value = [list(v) for v in value] if key == "pairs" else value
                dumped = yaml.safe_dump(_plain(value), default_flow_style=True).strip().removesuffix("...").strip()
                lines.append(f"    params.{key} = {dumped}")
    return lines


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v
