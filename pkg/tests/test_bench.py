import json

import numpy as np
import pytest
from scipy import stats

from flowsteer.bench.datasets import (
    PAIRS_2D,
    chiral_toy_geometries,
    gen_2d_dataset,
    gen_chiral_toy_sampler,
    gen_hypercube_pair_sampler,
    read_points_csv,
    write_points_csv,
)
from flowsteer.bench.experiments import (
    SUITES,
    ChiralConfig,
    HypercubeConfig,
    TwoDConfig,
    TwoGaussianConfig,
    run_2d_benchmark,
    run_chiral_benchmark,
    run_hypercube_benchmark,
    run_suite,
    run_two_gaussian,
    tilted_reference,
    tune_lambda,
    with_profile,
)
from flowsteer.bench.metrics import ProjectedReference, random_directions, sliced_w2, success_rate
from flowsteer.bench.report import BenchmarkReport, config_hash
from flowsteer.exceptions import ConfigError
from flowsteer.potentials import ChiralCenter, normalized_chiral_volume, make_potential


# -- datasets ---------------------------------------------------------------------


def test_hypercube_corners_uniform_and_centred():
    x0, x1 = gen_hypercube_pair_sampler(3, 0.2)(100_000, np.random.default_rng(0))
    assert np.all(np.abs(x0) <= 1.0)
    corner_ids = ((np.sign(x1) > 0).astype(int) * [4, 2, 1]).sum(axis=1)
    assert stats.chisquare(np.bincount(corner_ids, minlength=8)).pvalue > 0.001
    assert np.all(np.abs(x1.mean(axis=0)) < 4 * 2.0 / np.sqrt(100_000))
    x0, x1 = gen_hypercube_pair_sampler(1, 0.2)(1000, np.random.default_rng(1))
    assert set(np.unique(np.round(x1 / 2.0))) == {-1.0, 1.0}


def test_2d_datasets():
    rng = np.random.default_rng(2)
    circle = gen_2d_dataset("circle", 10_000, rng)
    assert abs(np.linalg.norm(circle, axis=1).mean() - 1.0) < 0.02
    eight = gen_2d_dataset("eight_gaussians", 10_000, rng)
    assert np.all(np.abs(eight.mean(axis=0)) < 0.1)
    square = gen_2d_dataset("uniform_square", 10_000, rng)
    for col in square.T:
        assert stats.kstest(col, stats.uniform(-2, 4).cdf).pvalue > 0.001
    for name in ("s_curve", "moons"):
        pts = gen_2d_dataset(name, 1000, rng)
        assert pts.shape == (1000, 2) and np.all(np.abs(pts) < 2.5)
    with pytest.raises(ConfigError):
        gen_2d_dataset("spiral", 10, rng)
    assert len(PAIRS_2D) == 3


def test_chiral_toy_geometry():
    rng = np.random.default_rng(3)
    g, hand = chiral_toy_geometries(4000, rng)
    pos = g.reshape(-1, 5, 3)
    vn = normalized_chiral_volume(pos[:, 1], pos[:, 2], pos[:, 3], pos[:, 4])
    assert np.mean(np.abs(vn) >= 0.5) >= 0.99
    # R ⇔ negative volume for neighbours in stored order
    assert np.all((vn < 0) == (hand == "R"))
    assert stats.chisquare([np.sum(hand == "R"), np.sum(hand == "S")]).pvalue > 0.001
    assert np.abs(pos.mean(axis=1)).max() < 0.2
    x0, x1 = gen_chiral_toy_sampler()(8, rng)
    assert x0.shape == x1.shape == (8, 15)


def test_points_csv_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(7, 3))
    write_points_csv(tmp_path / "p.csv", x)
    np.testing.assert_array_equal(read_points_csv(tmp_path / "p.csv"), x)


# -- metrics ------------------------------------------------------------------------


def test_sliced_w2_examples():
    assert sliced_w2([[0.0]], [[3.0]], n_proj=8, rng=0) == pytest.approx(3.0)
    rng = np.random.default_rng(4)
    A = rng.normal(size=(500, 3))
    assert sliced_w2(A, A[::-1], rng=0) == pytest.approx(0.0, abs=1e-12)
    A, B = rng.normal(size=(10_000, 2)), rng.normal(size=(10_000, 2)) + [1.0, 0.0]
    assert sliced_w2(A, B, rng=1) == pytest.approx(1 / np.sqrt(2), rel=0.1)


def test_sliced_w2_symmetry_rotation_and_unequal_sizes():
    rng = np.random.default_rng(5)
    A, B = rng.normal(size=(300, 2)), rng.normal(size=(200, 2)) * 2 + 1
    assert sliced_w2(A, B, rng=0) == pytest.approx(sliced_w2(B, A, rng=0), rel=1e-12)
    c, s = np.cos(0.7), np.sin(0.7)
    R = np.array([[c, -s], [s, c]])
    assert sliced_w2(A @ R.T, B @ R.T, rng=0) == pytest.approx(sliced_w2(A, B, rng=0), rel=0.05)
    big = rng.normal(size=(4000, 2))
    assert sliced_w2(big[:1000], big[1000:], rng=0) < 0.1


def test_projected_reference_matches_sliced_w2():
    rng = np.random.default_rng(6)
    B = rng.normal(size=(400, 3))
    dirs = random_directions(3, 64, rng)
    ref = ProjectedReference(B, directions=dirs)
    for n in (400, 123):
        A = rng.normal(size=(n, 3)) + 0.5
        assert ref.distance(A) == sliced_w2(A, B, directions=dirs)


def test_success_rate_examples():
    assert success_rate(np.ones((5, 3))) == 1.0
    assert success_rate(-np.ones((5, 3))) == 0.0
    x = np.random.default_rng(7).normal(size=(10_000, 2))
    assert abs(success_rate(x) - 0.25) < 0.02
    with pytest.raises(ValueError):
        success_rate(np.zeros((0, 2)))


# -- reports and helpers -----------------------------------------------------------------


def test_report_summary_and_files(tmp_path):
    rep = BenchmarkReport("demo", {"seed": 1, "dims": (2, 4)})
    for r, v in enumerate([0.1, 0.2, 0.3, 0.9]):
        rep.add(method="FK", repeat=r, seed=1, seed_key=f"1/{r}", score=v, runtime_s=0.5)
    summary = rep.summary(("method",), ("score",))
    assert summary[0]["n_runs"] == 4
    assert summary[0]["score_median"] == pytest.approx(0.25)
    rep.write(tmp_path, summary)
    doc = json.loads((tmp_path / "demo.json").read_text())
    assert doc["config_hash"] == config_hash({"seed": 1, "dims": [2, 4]})
    assert "runtime_s" not in doc["rows"][0]
    long_rows = (tmp_path / "demo_long.csv").read_text().splitlines()
    assert long_rows[0] == "experiment,row,method,repeat,seed,seed_key,metric,value"
    assert len(long_rows) == 5 and all(",score," in r for r in long_rows[1:])
    assert (tmp_path / "demo_timing.csv").read_text().count("0.5") == 4


def test_tilted_reference_and_lambda_tuning():
    rng = np.random.default_rng(8)
    pot = make_potential("half_plane", w=50.0, axis=0)
    ref = tilted_reference(lambda n, r: r.normal(size=(n, 2)), pot, 1.0, 2000, rng)
    assert ref.shape == (2000, 2) and np.mean(ref[:, 0] >= -0.1) > 0.99
    assert tune_lambda([0.0, 1.0, 2.0, 3.0], np.exp(-4.0)) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        tune_lambda([0.0, 0.0], 0.5)


def test_profiles_and_validation():
    assert with_profile(HypercubeConfig, "paper").steps_per_dim == 1000
    assert with_profile(TwoGaussianConfig, "smoke", repeats=2).repeats == 2
    with pytest.raises(ConfigError):
        with_profile(TwoDConfig, "huge")
    with pytest.raises(ConfigError):
        TwoDConfig(n_samples=100, n_particles=64)
    with pytest.raises(ConfigError):
        run_suite("hypercube", overrides={"dimz": (2,)})
    assert set(SUITES) == {"two_gaussian", "hypercube", "twod", "chiral"}


# -- tiny end-to-end suite runs ---------------------------------------------------------


def test_tiny_two_gaussian(tmp_path):
    cfg = TwoGaussianConfig(train_steps=40, hidden=(16,), n_particles=32, n_steps=10, repeats=1,
                            n_marginal=64, n_proj=16)
    rep = run_two_gaussian(cfg, model_dir=tmp_path)
    assert {r["method"] for r in rep.rows} == {"FK", "unsteered", "marginal_check"}
    assert all(r["telescoping_residual"] < 1e-9 for r in rep.select(method="FK"))


def test_tiny_hypercube_is_reproducible(tmp_path):
    cfg = HypercubeConfig(dims=(2,), steps_per_dim=20, hidden=(16,), batch_size=64, repeats=2, n_steps=9,
                          n_reference=128, n_proj=32, n_marginal=64)
    a = run_hypercube_benchmark(cfg, model_dir=tmp_path / "models")
    b = run_hypercube_benchmark(cfg, model_dir=tmp_path / "models")
    a.write(tmp_path / "a", a.summary(("method",), ("success_rate",)))
    b.write(tmp_path / "b", b.summary(("method",), ("success_rate",)))
    for name in ("hypercube.csv", "hypercube_long.csv", "hypercube.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len(a.select(method="FK")) == len(a.select(method="IS")) == 4
    assert all("seed_key" in r for r in a.rows)


def test_tiny_twod():
    cfg = TwoDConfig(train_steps=20, hidden=(16,), repeats=1, n_particles=32, n_samples=64, n_steps=8,
                     resample_every=4, n_reference=128, n_proj=16)
    rep = run_2d_benchmark(cfg)
    assert {(r["dataset"], r["model"]) for r in rep.rows} == {
        (f"{s}->{t}", k) for s, t in PAIRS_2D for k in ("cfm", "ot")}
    assert {r["method"] for r in rep.rows} == {"FK", "FK_lambda0", "unsteered"}


def test_tiny_chiral():
    cfg = ChiralConfig(train_steps=20, hidden=(16,), n_particles=16, n_samples=32, n_steps=10, repeats=1,
                       n_unsteered=1024, n_tune=128, n_marginal=64, n_proj=16)
    rep = run_chiral_benchmark(cfg)
    assert rep.extras["lam_tuned"] and rep.extras["lam"] > 0
    assert {r["method"] for r in rep.rows} == {"unsteered", "FK", "FK_lambda0", "marginal_check"}
    assert abs(rep.extras["data_correct_fraction"] - 0.5) < 0.1
    with pytest.raises(ConfigError):
        ChiralConfig(handedness="X")
    assert ChiralCenter((1, 2, 3, 4), "R").sign == 1.0
