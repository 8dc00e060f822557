import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from flowsteer.exceptions import ConfigError, DegenerateGeometryError
from flowsteer.potentials import (
    ChiralCenter,
    chiral_volume,
    chirality_potential,
    consistent_chirality_error,
    distance_potential,
    half_plane_potential,
    indicator_potential,
    make_potential,
    normalized_chiral_volume,
    read_chiral_centers,
    read_geometry,
    thresholded_chirality_error,
    write_chiral_centers,
    write_geometry,
)

FRAME = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
MIRROR = FRAME * np.array([1, 1, -1])


def test_orthant_potential_examples():
    assert indicator_potential([1.0, 1.0], 5) == 0.0
    assert indicator_potential([-0.1, 3.0], 5) == 5.0
    assert indicator_potential([0.0, 0.0], 5) == 0.0
    assert distance_potential([1.0, 2.0], 7.0) == 0.0
    assert distance_potential([-1.0, -2.0, 3.0], 2.0) == 6.0
    assert half_plane_potential([5.0, -0.5], 4.0, axis=1) == 2.0
    np.testing.assert_array_equal(indicator_potential([[1, 1], [-1, 0]], 3.0), [0.0, 3.0])


coords = arrays(float, 4, elements=st.floats(-10, 10))


@given(coords, coords, st.floats(0.0, 5.0))
def test_distance_lipschitz_and_indicator_range(x, y, w):
    assert abs(distance_potential(x, w) - distance_potential(y, w)) <= w * np.abs(x - y).sum() + 1e-9
    assert indicator_potential(x, w) in (0.0, w)


def test_make_potential():
    assert make_potential("distance", w=2.0)([[-1.0, -2.0, 3.0]])[0] == 6.0
    assert make_potential("half_plane", w=1.0, axis=0)([[-3.0, 1.0]])[0] == 3.0
    with pytest.raises(ConfigError):
        make_potential("sphere", w=1.0)


def test_chiral_volume_examples():
    assert chiral_volume(*FRAME) == pytest.approx(1 / 6)
    assert chiral_volume(*MIRROR) == pytest.approx(-1 / 6)
    assert chiral_volume([0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]) == 0.0
    assert normalized_chiral_volume(*FRAME) == pytest.approx(1.0)
    assert normalized_chiral_volume(*(2 * FRAME)) == pytest.approx(1.0)
    assert normalized_chiral_volume(*MIRROR) == pytest.approx(-1.0)


def _parity(p):
    inversions = sum(1 for i in range(4) for j in range(i + 1, 4) if p[i] > p[j])
    return -1 if inversions % 2 else 1


def test_permutation_parity_exhaustive():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pts = rng.normal(size=(4, 3))
        v, vn = chiral_volume(*pts), normalized_chiral_volume(*pts)
        for p in itertools.permutations(range(4)):
            assert chiral_volume(*pts[list(p)]) == pytest.approx(_parity(p) * v, abs=1e-12)
            # the normalisation depends on which point is the apex, so only the sign is permutation-covariant
            assert np.sign(normalized_chiral_volume(*pts[list(p)])) == _parity(p) * np.sign(vn)


def test_rigid_motion_invariance_and_reflection():
    rng = np.random.default_rng(1)
    for k in range(50):
        pts = rng.normal(size=(4, 3))
        R = Rotation.random(random_state=k).as_matrix()
        moved = pts @ R.T + rng.normal(scale=5.0, size=3)
        assert abs(chiral_volume(*moved) - chiral_volume(*pts)) < 1e-9
        assert abs(normalized_chiral_volume(*moved) - normalized_chiral_volume(*pts)) < 1e-9
        assert chiral_volume(*-pts) == -chiral_volume(*pts)
        assert normalized_chiral_volume(*(3.7 * pts)) == pytest.approx(normalized_chiral_volume(*pts), rel=1e-12)


def test_degenerate_edge_raises_only_for_normalized():
    pts = FRAME.copy()
    pts[2] = pts[0]
    assert chiral_volume(*pts) == 0.0
    with pytest.raises(DegenerateGeometryError):
        normalized_chiral_volume(*pts)


def _geometry(*tetras):
    return np.concatenate([t.ravel() for t in tetras])


def test_chirality_potential_examples():
    g = _geometry(MIRROR, FRAME)  # atoms 0-3 give V = -1/6, atoms 4-7 give V = +1/6
    assert chirality_potential(g, []) == 0.0
    assert chirality_potential(g, [ChiralCenter((0, 1, 2, 3), "R")]) == 0.0
    centers = [ChiralCenter((4, 5, 6, 7), "R"), ChiralCenter((4, 5, 6, 7), "S")]
    assert chirality_potential(g, centers) == pytest.approx(1 / 6)
    batch = np.stack([g, g])
    np.testing.assert_allclose(chirality_potential(batch, centers), [1 / 6, 1 / 6])
    with pytest.raises(IndexError):
        chirality_potential(g, [ChiralCenter((0, 1, 2, 8), "R")])


def test_chirality_errors():
    g = _geometry(MIRROR, FRAME)
    good, flipped = ChiralCenter((0, 1, 2, 3), "R"), ChiralCenter((4, 5, 6, 7), "R")
    assert not consistent_chirality_error(g, [good])
    assert consistent_chirality_error(g, [good, flipped])
    assert not consistent_chirality_error(g, [])
    assert thresholded_chirality_error(g, [flipped])
    assert not thresholded_chirality_error(g, [good, ChiralCenter((4, 5, 6, 7), "S")], theta=0.25)
    # wrong sign with |V~| = 0.1: tilt the last neighbour toward the base plane
    shallow = FRAME.copy()
    shallow[3] = [np.sqrt(1 - 0.01), 0.0, 0.1]
    assert normalized_chiral_volume(*shallow) == pytest.approx(0.1)
    assert not thresholded_chirality_error(shallow.ravel(), [ChiralCenter((0, 1, 2, 3), "R")], theta=0.25)
    with pytest.raises(ValueError):
        thresholded_chirality_error(g, [good], theta=0.0)


@given(st.integers(0, 2**32 - 1))
def test_zero_potential_iff_no_consistent_error(seed):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=12)
    hand = str(rng.choice(["R", "S"]))
    centers = [ChiralCenter((0, 1, 2, 3), hand)]
    assert (chirality_potential(g, centers) == 0.0) == (not consistent_chirality_error(g, centers))


def test_center_validation():
    with pytest.raises(ValueError):
        ChiralCenter((0, 1, 1, 2), "R")
    with pytest.raises(ValueError):
        ChiralCenter((0, 1, 2, 3), "X")


def test_file_round_trips(tmp_path):
    centers = [ChiralCenter((0, 1, 2, 3), "R", "reactant", "c0"), ChiralCenter((4, 3, 2, 1), "S", "product", "c1")]
    write_chiral_centers(tmp_path / "c.csv", centers)
    assert read_chiral_centers(tmp_path / "c.csv") == centers
    pos = np.random.default_rng(0).normal(size=(5, 3))
    write_geometry(tmp_path / "g.csv", pos)
    np.testing.assert_array_equal(read_geometry(tmp_path / "g.csv"), pos)
    (tmp_path / "bad.csv").write_text("c0,0,1,2,R,reactant\n")
    with pytest.raises(ConfigError):
        read_chiral_centers(tmp_path / "bad.csv")
