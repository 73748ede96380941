import math
import os

import numpy as np
import pandas as pd
import pytest
from scipy.spatial.transform import Rotation

from camera.schemas import CameraDistribution
from errors import DegenerateAlignment, DimensionError
from metrics_stats.density import (
    bin_density_analysis, dataset_stats, plot_bin_report, sequence_factors, write_stats,
)
from metrics_stats.metrics import mpjpe, pa_mpjpe, procrustes_align
from synth_engine.scenario import generate_scenario
from synth_engine.sequence import save_sequence, synthesize_sequence


def random_similarity(rng):
    return Rotation.random(random_state=int(rng.integers(1 << 30))).as_matrix(), rng.uniform(0.5, 2.0), rng.normal(size=3)


@pytest.fixture(scope="module")
def skeleton():
    return np.random.default_rng(100).normal(0.0, 0.3, size=(24, 3))


def test_mpjpe_in_millimetres():
    gt = np.zeros((2, 3))
    pred = np.array([[0.003, 0.004, 0.0], [0.0, 0.0, 0.001]])
    assert mpjpe(pred, gt) == pytest.approx(3.0)
    with pytest.raises(DimensionError):
        mpjpe(np.zeros((2, 3)), np.zeros((3, 3)))


def test_procrustes_recovers_similarity(skeleton):
    rng = np.random.default_rng(0)
    for _ in range(20):
        R, s, t = random_similarity(rng)
        pred = s * skeleton @ R.T + t
        result = procrustes_align(pred, skeleton)
        np.testing.assert_allclose(result.aligned, skeleton, atol=1e-9)
        assert result.scale == pytest.approx(1.0 / s)
        np.testing.assert_allclose(result.rotation, R.T, atol=1e-9)
        assert pa_mpjpe(pred, skeleton) == pytest.approx(0.0, abs=1e-6)


def test_procrustes_rotation_matches_vector_alignment(skeleton):
    rng = np.random.default_rng(1)
    pred = skeleton @ Rotation.random(random_state=5).as_matrix().T + rng.normal(0.0, 0.02, skeleton.shape)
    result = procrustes_align(pred, skeleton, scale=False)
    oracle, _ = Rotation.align_vectors(skeleton - skeleton.mean(axis=0), pred - pred.mean(axis=0))
    np.testing.assert_allclose(result.rotation, oracle.as_matrix(), atol=1e-8)
    assert result.scale == 1.0


def test_procrustes_never_reflects(skeleton):
    mirrored = skeleton * [-1.0, 1.0, 1.0]
    result = procrustes_align(mirrored, skeleton)
    assert np.linalg.det(result.rotation) == pytest.approx(1.0)
    assert pa_mpjpe(mirrored, skeleton) > 1.0


def test_alignment_apply_matches_aligned(skeleton):
    pred = skeleton + np.random.default_rng(2).normal(0.0, 0.05, skeleton.shape)
    result = procrustes_align(pred, skeleton)
    np.testing.assert_allclose(result.apply(pred), result.aligned)


def test_pa_mpjpe_never_exceeds_mpjpe(skeleton):
    rng = np.random.default_rng(3)
    for _ in range(1000):
        R, s, t = random_similarity(rng)
        pred = s * skeleton @ R.T + t + rng.normal(0.0, 0.03, skeleton.shape)
        assert pa_mpjpe(pred, skeleton) <= mpjpe(pred, skeleton) + 1e-9


def test_pa_mpjpe_is_similarity_invariant(skeleton):
    rng = np.random.default_rng(4)
    pred = skeleton + rng.normal(0.0, 0.03, skeleton.shape)
    base = pa_mpjpe(pred, skeleton)
    drift = 0.0
    for _ in range(1000):
        R, s, t = random_similarity(rng)
        drift = max(drift, abs(pa_mpjpe(s * pred @ R.T + t, skeleton) - base))
    assert drift < 1e-9


def test_procrustes_beats_random_similarities(skeleton):
    rng = np.random.default_rng(9)
    pred = 1.3 * skeleton @ Rotation.from_rotvec([0.3, -1.1, 0.4]).as_matrix().T + [0.2, 0.5, -1.0]
    pred += rng.normal(0.0, 0.03, skeleton.shape)
    best = procrustes_align(pred, skeleton)
    optimum = float(np.sum((best.aligned - skeleton) ** 2))

    n = 10_000
    # 半分は最適解の近傍、半分は一様な回転
    near = Rotation.from_rotvec(rng.normal(0.0, 0.05, size=(n // 2, 3))).as_matrix() @ best.rotation
    far = Rotation.random(n - n // 2, random_state=10).as_matrix()
    rotations = np.concatenate([near, far])
    scales = best.scale * np.exp(rng.normal(0.0, 0.1, n))
    shifts = best.translation + rng.normal(0.0, 0.05, size=(n, 3))
    candidates = scales[:, None, None] * np.einsum("nij,kj->nki", rotations, pred) + shifts[:, None, :]
    objectives = np.sum((candidates - skeleton) ** 2, axis=(1, 2))
    assert objectives.min() >= optimum - 1e-12


def test_pa_mpjpe_averages_frames(skeleton):
    rng = np.random.default_rng(5)
    gt = np.stack([skeleton, skeleton * 1.1])
    pred = gt + rng.normal(0.0, 0.02, gt.shape)
    expected = 0.5 * (pa_mpjpe(pred[0], gt[0]) + pa_mpjpe(pred[1], gt[1]))
    assert pa_mpjpe(pred, gt) == pytest.approx(expected)


def test_degenerate_alignment():
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateAlignment):
        procrustes_align(np.random.default_rng(6).normal(size=(5, 3)), line)
    plane = np.random.default_rng(7).normal(size=(5, 3)) * [1.0, 1.0, 0.0]
    with pytest.raises(DegenerateAlignment):
        procrustes_align(np.ones((5, 3)), plane)
    with pytest.raises(DimensionError):
        procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))


def test_planar_ground_truth_is_aligned():
    plane = np.random.default_rng(8).normal(size=(6, 3)) * [1.0, 1.0, 0.0]
    R = Rotation.from_rotvec([0.2, -0.4, 0.3]).as_matrix()
    assert pa_mpjpe(plane @ R.T, plane) == pytest.approx(0.0, abs=1e-6)


def test_bin_density_matches_histogram():
    rng = np.random.default_rng(9)
    values = rng.uniform(0.0, 10.0, 500)
    errors = rng.normal(50.0, 5.0, 500)
    report = bin_density_analysis(zip(values, errors), bins=7)
    counts, edges = np.histogram(values, bins=7)
    np.testing.assert_array_equal(report.counts, counts)
    np.testing.assert_allclose(report.edges, edges)
    first = (values >= edges[0]) & (values < edges[1])
    assert report.mean_error[0] == pytest.approx(errors[first].mean())


def test_bin_density_edges_and_empty_bins():
    report = bin_density_analysis([(0.0, 1.0), (1.0, 3.0), (3.0, 5.0)], bins=[0.0, 1.0, 2.0, 3.0], factor="yaw_deg")
    # 最後のビンは右端を含む
    assert report.counts.tolist() == [1, 1, 1]
    report = bin_density_analysis([(0.5, 1.0), (2.5, 3.0)], bins=[0.0, 1.0, 2.0, 3.0])
    assert report.empty.tolist() == [False, True, False]
    assert math.isnan(report.mean_error[1])
    frame = report.to_frame()
    assert frame["count"].tolist() == [1, 0, 1]
    assert list(frame.columns) == ["factor", "bin_low", "bin_high", "count", "mean_error_mm", "empty"]


def test_bin_density_accepts_dataframe():
    table = pd.DataFrame({"distance_m": [1.0, 2.0, 3.0, 4.0], "error_mm": [10.0, 20.0, 30.0, 40.0]})
    report = bin_density_analysis(table, bins=2, factor="distance_m")
    assert report.factor == "distance_m"
    assert report.mean_error.tolist() == [15.0, 35.0]


@pytest.mark.parametrize("records, bins", [
    ([], 3),
    ([(math.nan, 1.0)], 3),
    ([(0.5, 1.0)], [1.0, 0.0]),
    ([(5.0, 1.0)], [0.0, 1.0]),
], ids=["empty", "non_finite", "decreasing_edges", "outside"])
def test_bin_density_errors(records, bins):
    with pytest.raises(ValueError):
        bin_density_analysis(records, bins)


@pytest.fixture(scope="module")
def placed_sequence(toy_tree, toy_catalogs):
    spec = generate_scenario(3, toy_catalogs, sequence_id="seq_placed")
    dist = CameraDistribution.point_mass(yaw=math.radians(45.0), elevation=math.radians(10.0), distance=3.0)
    return synthesize_sequence(spec, toy_tree, [], toy_catalogs, dist)


def test_sequence_factors_recover_camera(placed_sequence):
    factors = sequence_factors(placed_sequence)
    assert factors["yaw_deg"] == pytest.approx(45.0)
    assert factors["elevation_deg"] == pytest.approx(10.0)
    assert factors["distance_m"] == pytest.approx(3.0)
    assert factors["height_m"] == pytest.approx(3.0 * math.sin(math.radians(10.0)))
    assert factors["pose_spread_m"] > 0.0
    assert 0.0 <= factors["self_occluded_fraction"] <= 1.0
    assert factors["sequence_id"] == "seq_placed"


def test_dataset_stats_counts_sequences(tmp_path, toy_tree, toy_catalogs):
    for seed in range(3):
        spec = generate_scenario(seed, toy_catalogs, sequence_id=f"seq_{seed}")
        seq = synthesize_sequence(spec, toy_tree, [], toy_catalogs, CameraDistribution())
        save_sequence(seq, tmp_path / f"seq_{seed}.seq.json")
    (tmp_path / "notes.txt").write_text("ignored", encoding="utf-8")
    result = dataset_stats(str(tmp_path), bins=6)
    assert len(result.sequences) == 3
    assert set(result.histograms) == {"yaw_deg", "elevation_deg", "distance_m"}
    assert all(r.counts.sum() == 3 for r in result.histograms.values())
    summary = result.summary()
    assert "distance_m" in summary["factor"].tolist()

    paths = write_stats(result, str(tmp_path / "stats"))
    for path in paths.values():
        assert os.path.exists(path)
    assert len(pd.read_csv(paths["sequences"])) == 3


def test_dataset_stats_empty_directory(tmp_path):
    result = dataset_stats(str(tmp_path))
    assert result.empty
    assert result.summary().empty
    paths = write_stats(result, str(tmp_path / "out"))
    assert "plot" not in paths
    assert pd.read_csv(paths["sequences"]).empty


def test_plot_bin_report_writes_svg(tmp_path):
    report = bin_density_analysis([(0.5, 1.0), (2.5, 3.0)], bins=[0.0, 1.0, 2.0, 3.0], factor="yaw_deg")
    path = tmp_path / "density.svg"
    plot_bin_report(report, str(path))
    assert path.read_text(encoding="utf-8").lstrip().startswith("<?xml")
