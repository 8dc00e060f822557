"""Exception types raised by flowsteer."""


class FlowSteerError(Exception):
    """Base class for all library errors."""


class SingularityError(FlowSteerError, ValueError):
    """A formula was evaluated where it is singular (e.g. bridge or score at t in {0, 1})."""


class NonFiniteError(FlowSteerError, FloatingPointError):
    """A loss, state or weight became NaN or infinite."""


class DegenerateEnsembleError(FlowSteerError, RuntimeError):
    """All particle weights vanished, so resampling is undefined."""


class DegenerateGeometryError(FlowSteerError, ValueError):
    """A tetrahedron has a zero-length edge."""


class ContractViolationError(FlowSteerError, RuntimeError):
    """An estimator was used outside the regime where it is valid."""


class ConfigError(FlowSteerError, ValueError):
    """A run configuration is malformed or inconsistent."""
