"""Flow matching with Feynman-Kac steering toward low-energy samples."""

from .exceptions import (
    ConfigError,
    ContractViolationError,
    DegenerateEnsembleError,
    DegenerateGeometryError,
    FlowSteerError,
    NonFiniteError,
    SingularityError,
)
from .estimators import FlowMatchingSampler, SteeredSampler
from .flow import (
    TrainConfig,
    bridge_log_density,
    cfm_regression_loss,
    integrate_ode,
    minibatch_ot_pairing,
    ot_schedule,
    sample_conditional_path,
    train_flow,
)
from .mlp import Adam, VelocityModel
from .potentials import (
    ChiralCenter,
    PotentialSpec,
    chiral_volume,
    chirality_potential,
    distance_potential,
    indicator_potential,
    make_potential,
    normalized_chiral_volume,
)
from .sde import NoiseSchedule, ScoreSource, gaussian_score_from_velocity, integrate_sde
from .steering import FKResult, SteeringConfig, effective_sample_size, fk_sample, importance_sample, multinomial_resample

__version__ = "0.1.0"

__all__ = [
    "Adam", "ChiralCenter", "ConfigError", "ContractViolationError", "DegenerateEnsembleError",
    "DegenerateGeometryError", "FKResult", "FlowMatchingSampler", "FlowSteerError", "NoiseSchedule", "NonFiniteError",
    "PotentialSpec", "ScoreSource", "SingularityError", "SteeredSampler", "SteeringConfig", "TrainConfig", "VelocityModel",
    "bridge_log_density", "cfm_regression_loss", "chiral_volume", "chirality_potential", "distance_potential",
    "effective_sample_size", "fk_sample", "gaussian_score_from_velocity", "importance_sample",
    "indicator_potential", "integrate_ode", "integrate_sde", "make_potential", "minibatch_ot_pairing",
    "multinomial_resample", "normalized_chiral_volume", "ot_schedule", "sample_conditional_path", "train_flow",
]
