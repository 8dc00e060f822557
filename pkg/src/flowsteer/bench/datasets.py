"""Synthetic source/target distributions used by the benchmarks."""

from __future__ import annotations

import numpy as np

from ..exceptions import ConfigError

TETRA_EDGE = 1.5
JITTER = 0.05


def gen_hypercube_pair_sampler(d, corner_std=0.2):
    """``x0 ~ U[-1, 1]^d``; ``x1`` is a Gaussian of std ``corner_std`` at a uniformly chosen corner of ``{-2, 2}^d``."""
    if d < 1 or corner_std <= 0:
        raise ValueError("need d >= 1 and corner_std > 0")

    def sample(n, rng):
        x0 = rng.uniform(-1.0, 1.0, size=(n, d))
        corners = 2.0 * (2 * rng.integers(0, 2, size=(n, d)) - 1)
        return x0, corners + corner_std * rng.standard_normal((n, d))

    sample.dim = d
    return sample


def hypercube_prior(d):
    def sample(n, rng):
        return rng.uniform(-1.0, 1.0, size=(n, d))

    return sample


def _circle(n, rng):
    theta = rng.uniform(0.0, 2 * np.pi, n)
    r = 1.0 + 0.05 * rng.standard_normal(n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def _s_curve(n, rng):
    u = rng.uniform(-np.pi, np.pi, n)
    pts = np.column_stack([2.0 * np.sin(u), np.sign(u) * (np.cos(u) - 1.0)])
    return pts + 0.05 * rng.standard_normal((n, 2))


def _eight_gaussians(n, rng):
    angles = np.pi / 4 * rng.integers(0, 8, n)
    centers = 2.0 * np.column_stack([np.cos(angles), np.sin(angles)])
    return centers + 0.1 * rng.standard_normal((n, 2))


def _moons(n, rng):
    # upper arc (cos, sin); lower arc (1 - cos, 0.5 - sin), as in the usual two-moons layout
    upper = rng.random(n) < 0.5
    theta = rng.uniform(0.0, np.pi, n)
    pts = np.where(
        upper[:, None],
        np.column_stack([np.cos(theta), np.sin(theta)]),
        np.column_stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)]),
    )
    return pts + 0.05 * rng.standard_normal((n, 2))


def _uniform_square(n, rng):
    return rng.uniform(-2.0, 2.0, size=(n, 2))


DATASETS_2D = {
    "circle": _circle,
    "s_curve": _s_curve,
    "eight_gaussians": _eight_gaussians,
    "moons": _moons,
    "uniform_square": _uniform_square,
}

PAIRS_2D = (("circle", "s_curve"), ("uniform_square", "eight_gaussians"), ("eight_gaussians", "moons"))


def gen_2d_dataset(name, n, rng):
    if n < 1:
        raise ValueError("n must be positive")
    try:
        return DATASETS_2D[name](n, rng)
    except KeyError:
        raise ConfigError(f"unknown 2D dataset {name!r}; choose from {sorted(DATASETS_2D)}") from None


def dataset_sampler(name):
    """``sampler(n, rng)`` drawing from a named 2D dataset."""
    gen_2d_dataset(name, 1, np.random.default_rng(0))
    return lambda n, rng: gen_2d_dataset(name, n, rng)


def pair_sampler_2d(source, target):
    src, tgt = dataset_sampler(source), dataset_sampler(target)

    def sample(n, rng):
        return src(n, rng), tgt(n, rng)

    sample.dim = 2
    return sample


def gaussian_mixture_1d(means=(-2.0, 2.0), std=0.3):
    means = np.asarray(means, float)

    def sample(n, rng):
        return (means[rng.integers(0, means.size, n)] + std * rng.standard_normal(n))[:, None]

    return sample


def two_gaussian_pair_sampler(means=(-2.0, 2.0), std=0.3):
    target = gaussian_mixture_1d(means, std)

    def sample(n, rng):
        return rng.standard_normal((n, 1)), target(n, rng)

    sample.dim = 1
    return sample


# -- toy chirality ---------------------------------------------------------------

# Regular tetrahedron vertices with centroid at the origin.  In this order the
# chiral volume is negative, i.e. the frame is R-handed; mirroring z gives S.
_TETRA = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
_TETRA = _TETRA * TETRA_EDGE / (2.0 * np.sqrt(2.0))


def random_rotations(n, rng):
    """``n`` Haar-distributed rotation matrices, shape ``(n, 3, 3)``."""
    q, r = np.linalg.qr(rng.standard_normal((n, 3, 3)))
    q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
    flip = np.linalg.det(q) < 0
    q[flip, :, 0] = -q[flip, :, 0]
    return q


def chiral_toy_geometries(n, rng, handedness=None):
    """Centre atom at the origin plus four neighbours on a jittered, rotated regular tetrahedron.

    ``handedness`` is a length-``n`` sequence of "R"/"S"; a fair coin decides when omitted.
    Returns flattened geometries ``(n, 15)`` and the handedness array.
    """
    if handedness is None:
        handedness = np.where(rng.random(n) < 0.5, "R", "S")
    handedness = np.asarray(handedness)
    verts = np.broadcast_to(_TETRA, (n, 4, 3)).copy()
    verts[handedness == "S", :, 2] *= -1.0
    rot = random_rotations(n, rng)
    nbrs = np.einsum("nij,naj->nai", rot, verts) + JITTER * rng.standard_normal((n, 4, 3))
    pos = np.concatenate([np.zeros((n, 1, 3)), nbrs], axis=1)
    return pos.reshape(n, 15), handedness


def gen_chiral_toy_sampler():
    """Pairs over R^15: ``x0 ~ N(0, I)``; ``x1`` a toy stereocentre of random handedness."""

    def target(n, rng):
        return chiral_toy_geometries(n, rng)[0]

    def sample(n, rng):
        return rng.standard_normal((n, 15)), target(n, rng)

    sample.dim = 15
    sample.target = target
    return sample


def read_points_csv(path):
    """One point per row, no header."""
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


def write_points_csv(path, points):
    np.savetxt(path, np.atleast_2d(points), delimiter=",", fmt="%.17g")
