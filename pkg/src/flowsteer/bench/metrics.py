"""Sample-quality metrics."""

from __future__ import annotations

import numpy as np

from .._validation import as_batch


def random_directions(d, n_proj, rng):
    u = rng.standard_normal((n_proj, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _quantiles(proj, levels):
    # proj: (n_proj, m) sorted along axis 1; linear interpolation at the given levels
    m = proj.shape[1]
    if m == 1:
        return np.repeat(proj, levels.size, axis=1)
    pos = levels * m - 0.5
    pos = np.clip(pos, 0.0, m - 1.0)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, m - 1)
    frac = pos - lo
    return proj[:, lo] * (1.0 - frac) + proj[:, hi] * frac


def sliced_w2(A, B, n_proj=4096, rng=None, directions=None):
    """Sliced Wasserstein-2 distance between two empirical point clouds.

    Both clouds are projected on ``n_proj`` random unit directions; per direction
    the 1-D W2 couples sorted projections.  Unequal sizes are matched by
    interpolating quantiles at ``max(m, n)`` mid-point levels.
    """
    A, B = as_batch(A, name="A"), as_batch(B, name="B")
    if A.shape[1] != B.shape[1]:
        raise ValueError("point clouds live in different dimensions")
    if directions is None:
        directions = random_directions(A.shape[1], n_proj, np.random.default_rng(rng))
    pa = np.sort(directions @ A.T, axis=1)
    pb = np.sort(directions @ B.T, axis=1)
    if pa.shape[1] != pb.shape[1]:
        levels = (np.arange(max(pa.shape[1], pb.shape[1])) + 0.5) / max(pa.shape[1], pb.shape[1])
        pa, pb = _quantiles(pa, levels), _quantiles(pb, levels)
    return float(np.sqrt(np.mean((pa - pb) ** 2)))


class ProjectedReference:
    """A reference cloud with its projections sorted once, for repeated sliced-W2 queries."""

    def __init__(self, B, n_proj=4096, rng=None, directions=None):
        B = as_batch(B, name="B")
        if directions is None:
            directions = random_directions(B.shape[1], n_proj, np.random.default_rng(rng))
        self.directions = directions
        self.points = B
        self._sorted = np.sort(directions @ B.T, axis=1)

    def distance(self, A):
        """Same value as ``sliced_w2(A, self.points, directions=self.directions)``."""
        A = as_batch(A, dim=self.points.shape[1], name="A")
        pa, pb = np.sort(self.directions @ A.T, axis=1), self._sorted
        if pa.shape[1] != pb.shape[1]:
            n = max(pa.shape[1], pb.shape[1])
            levels = (np.arange(n) + 0.5) / n
            pa, pb = _quantiles(pa, levels), _quantiles(pb, levels)
        return float(np.sqrt(np.mean((pa - pb) ** 2)))


def success_rate(samples):
    """Fraction of samples in the closed positive orthant."""
    x = as_batch(samples)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    return float(np.mean(np.all(x >= 0.0, axis=1)))


def quartiles(values):
    q1, med, q3 = np.percentile(np.asarray(values, float), [25, 50, 75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3)}
