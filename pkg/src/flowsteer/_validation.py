"""Input validation helpers shared by the numerical routines and estimators."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import NonFiniteError


def as_batch(x, dim=None, name="x"):
    """Coerce ``x`` to a 2-D float array of shape ``(n, d)``; a 1-D input is one point."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {x.shape}")
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"{name} has dimension {x.shape[1]}, expected {dim}")
    return x


def check_samples(X, dim=None, name="X"):
    """sklearn-style check for user-supplied sample matrices (finite, 2-D, non-empty)."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, input_name=name)
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"{name} has {X.shape[1]} features, expected {dim}")
    return X


def check_finite(x, what="value"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what}")
    return x
