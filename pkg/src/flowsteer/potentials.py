"""Energy potentials for steering: orthant potentials and tetrahedral chirality.

All potentials accept a single point ``(d,)`` or a batch ``(n, d)`` and return a
scalar or an ``(n,)`` array respectively.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Callable

import numpy as np

from .exceptions import ConfigError, DegenerateGeometryError


def _batched(fn):
    def wrapper(x, *args, **kwargs):
        x = np.asarray(x, dtype=float)
        out = fn(np.atleast_2d(x), *args, **kwargs)
        return float(out[0]) if x.ndim == 1 else out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_batched
def indicator_potential(x, w):
    """``w`` outside the closed positive orthant ``[0, inf)^d``, 0 inside."""
    return np.where(np.all(x >= 0.0, axis=1), 0.0, float(w))


@_batched
def distance_potential(x, w):
    """``w * sum_i max(0, -x_i)``: weighted L1 distance to the positive orthant."""
    return w * np.sum(np.maximum(0.0, -x), axis=1)


@_batched
def half_plane_potential(x, w, axis=1):
    """``w * max(0, -x[axis])``: distance potential acting on a single coordinate."""
    return w * np.maximum(0.0, -x[:, axis])


@dataclass(frozen=True)
class PotentialSpec:
    """A named energy ``U(x)`` with its parameters, evaluated on batches."""

    name: str
    energy: Callable[[np.ndarray], np.ndarray]
    params: dict | None = None

    def __call__(self, x):
        return np.asarray(self.energy(np.atleast_2d(np.asarray(x, float))), dtype=float)


def make_potential(kind, **params) -> PotentialSpec:
    """Build a :class:`PotentialSpec` from a name used in configs."""
    if kind == "indicator":
        return PotentialSpec("indicator", partial(indicator_potential, w=params["w"]), params)
    if kind == "distance":
        return PotentialSpec("distance", partial(distance_potential, w=params["w"]), params)
    if kind == "half_plane":
        axis = params.get("axis", 1)
        return PotentialSpec(
            "half_plane", partial(half_plane_potential, w=params["w"], axis=axis), {"axis": axis, **params}
        )
    if kind == "chirality":
        centers = params["centers"]
        return PotentialSpec("chirality", partial(chirality_potential, centers=centers), {"n_centers": len(centers)})
    raise ConfigError(f"unknown potential {kind!r}")


# -- chirality -----------------------------------------------------------------


def _triple(x1, x2, x3, x4):
    e1, e2, e3 = x2 - x1, x3 - x1, x4 - x1
    return np.einsum("...i,...i->...", np.cross(e1, e2), e3), (e1, e2, e3)


def chiral_volume(x1, x2, x3, x4):
    """Signed tetrahedron volume ``[(x2-x1) x (x3-x1)] . (x4-x1) / 6``; broadcasts over leading axes."""
    vol, _ = _triple(*(np.asarray(p, float) for p in (x1, x2, x3, x4)))
    return vol / 6.0


def normalized_chiral_volume(x1, x2, x3, x4):
    """Triple product over the product of the three edge lengths from ``x1``; scale invariant."""
    vol, edges = _triple(*(np.asarray(p, float) for p in (x1, x2, x3, x4)))
    lengths = np.prod([np.linalg.norm(e, axis=-1) for e in edges], axis=0)
    if np.any(lengths == 0.0):
        raise DegenerateGeometryError("zero-length edge in tetrahedron")
    return vol / lengths


@dataclass(frozen=True)
class ChiralCenter:
    """A stereocentre: neighbour atom indices in descending CIP priority and the wanted handedness."""

    neighbors: tuple[int, int, int, int]
    handedness: str
    source: str = "reactant"
    center_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "neighbors", tuple(int(i) for i in self.neighbors))
        if len(self.neighbors) != 4 or len(set(self.neighbors)) != 4:
            raise ValueError(f"need four distinct neighbour indices, got {self.neighbors}")
        if self.handedness not in ("R", "S"):
            raise ValueError(f"handedness must be 'R' or 'S', got {self.handedness!r}")
        if self.source not in ("reactant", "product"):
            raise ValueError(f"source must be 'reactant' or 'product', got {self.source!r}")

    @property
    def sign(self):
        # correct handedness <=> sign * V < 0
        return 1.0 if self.handedness == "R" else -1.0


def _positions(g):
    """Reshape flattened geometries ``(..., 3n)`` to positions ``(..., n, 3)``."""
    g = np.asarray(g, float)
    if g.shape[-1] % 3:
        raise ValueError(f"flattened geometry length {g.shape[-1]} is not a multiple of 3")
    return g.reshape(*g.shape[:-1], -1, 3)


def _center_points(pos, center):
    n_atoms = pos.shape[-2]
    if max(center.neighbors) >= n_atoms or min(center.neighbors) < -n_atoms:
        raise IndexError(f"centre {center.neighbors} out of range for {n_atoms} atoms")
    return [pos[..., i, :] for i in center.neighbors]


def signed_center_volumes(g, centers, normalized=False):
    """``sign_c * V_c`` for each centre (last axis); negative means correct handedness.

    ``g`` holds flattened geometries ``(..., 3n)``.
    """
    pos = _positions(g)
    vol = normalized_chiral_volume if normalized else chiral_volume
    cols = [c.sign * vol(*_center_points(pos, c)) for c in centers]
    if not cols:
        return np.zeros((*pos.shape[:-2], 0))
    return np.stack(cols, axis=-1)


def chirality_potential(g, centers):
    """``sum_c relu(sign_c * V_c)``: zero iff every centre has the declared handedness.

    ``g`` is one flattened geometry ``(3n,)`` (returns a float) or a batch ``(m, 3n)``.
    """
    g = np.asarray(g, float)
    single = g.ndim == 1
    out = np.sum(np.maximum(0.0, signed_center_volumes(np.atleast_2d(g), centers)), axis=-1)
    return float(out[0]) if single else out


def consistent_chirality_error(g, centers):
    """True iff a reaction-consistent centre has a volume sign contradicting its handedness."""
    if not centers:
        return False
    return bool(np.any(signed_center_volumes(np.ravel(g), centers) > 0.0))


def thresholded_chirality_error(g, centers, theta=0.25):
    """True iff some centre has the wrong sign of the normalised volume with magnitude above ``theta``."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    if not centers:
        return False
    sv = signed_center_volumes(np.ravel(g), centers, normalized=True)
    return bool(np.any((sv > 0.0) & (np.abs(sv) > theta)))


# -- file formats ----------------------------------------------------------------


def read_chiral_centers(path):
    """Rows ``center_id, i1, i2, i3, i4, handedness, source``; a header row is optional."""
    centers = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            if row[0].strip() == "center_id":
                continue
            if len(row) != 7:
                raise ConfigError(f"chiral centre row needs 7 fields, got {row}")
            cid, *idx, hand, src = (c.strip() for c in row)
            centers.append(ChiralCenter(tuple(int(i) for i in idx), hand, src, cid))
    return centers


def write_chiral_centers(path, centers):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["center_id", "i1", "i2", "i3", "i4", "handedness", "source"])
        for k, c in enumerate(centers):
            w.writerow([c.center_id or str(k), *c.neighbors, c.handedness, c.source])


def read_geometry(path):
    """XYZ-style CSV rows ``atom_index, x, y, z``; returns positions ``(n, 3)`` ordered by index."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip() in ("atom", "atom_index") or row[0].startswith("#"):
                continue
            rows.append((int(row[0]), *map(float, row[1:4])))
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ConfigError(f"atom indices in {path} are not 0..n-1")
    return np.array([r[1:] for r in rows], dtype=float)


def write_geometry(path, positions):
    positions = _positions(np.ravel(positions))
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["atom_index", "x", "y", "z"])
        for i, p in enumerate(positions):
            w.writerow([i, *(repr(float(c)) for c in p)])
