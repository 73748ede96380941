import json
import math

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.transform import Rotation

from camera.model import Camera, camera_angles, look_at, project, sample_camera, spherical_offset, world_to_cam
from camera.schemas import (
    CameraDistribution, CameraIntrinsics, Factor, load_camera_distribution, save_camera_distribution,
)
from errors import CameraError


def random_camera(rng):
    return Camera(
        rotation=Rotation.random(random_state=int(rng.integers(1 << 30))).as_matrix(),
        position=rng.normal(0.0, 3.0, size=3),
        fx=1100.0, fy=1050.0, cx=955.0, cy=530.0, width=1920, height=1080,
    )


def test_world_to_cam_camera_center_is_origin():
    cam = random_camera(np.random.default_rng(0))
    np.testing.assert_allclose(world_to_cam(cam.position, cam), np.zeros(3), atol=1e-12)


def test_world_to_cam_identity():
    cam = Camera(np.eye(3), np.zeros(3), 1000.0, 1000.0, 960.0, 540.0, 1920, 1080)
    X = np.array([[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]])
    np.testing.assert_array_equal(world_to_cam(X, cam), X)


def test_world_to_cam_matches_homogeneous_transform():
    rng = np.random.default_rng(1)
    for _ in range(20):
        cam = random_camera(rng)
        M = np.eye(4)
        M[:3, :3] = cam.rotation
        M[:3, 3] = -cam.rotation @ cam.position
        X = rng.normal(size=(10, 3))
        Xh = np.hstack([X, np.ones((10, 1))]) @ M.T
        np.testing.assert_allclose(world_to_cam(X, cam), Xh[:, :3], atol=1e-12)


def test_project_optical_axis_hits_principal_point():
    cam = Camera(np.eye(3), np.zeros(3), 1000.0, 1000.0, 960.0, 540.0, 1920, 1080)
    for z in (0.1, 1.0, 50.0):
        proj = project(np.array([[0.0, 0.0, z]]), cam)
        np.testing.assert_allclose(proj.uv[0], [960.0, 540.0])
        assert proj.in_frame[0] and proj.in_front[0]


def test_project_similar_triangles():
    cam = Camera(np.eye(3), np.zeros(3), 1000.0, 900.0, 960.0, 540.0, 1920, 1080)
    proj = project(np.array([[0.4, 0.0, 2.0]]), cam)
    np.testing.assert_allclose(proj.uv[0], [960.0 + 1000.0 * 0.4 / 2.0, 540.0])


def test_project_matches_projection_matrix():
    rng = np.random.default_rng(2)
    cam = random_camera(rng)
    P = cam.K @ np.hstack([cam.rotation, (-cam.rotation @ cam.position)[:, None]])
    X = cam.position + rng.normal(size=(500, 3)) * 4.0
    xh = np.hstack([X, np.ones((len(X), 1))]) @ P.T
    proj = project(X, cam)
    front = xh[:, 2] > 1e-6
    np.testing.assert_array_equal(proj.in_front, front)
    np.testing.assert_allclose(proj.uv[front], xh[front, :2] / xh[front, 2:], atol=1e-9)
    assert np.all(np.isnan(proj.uv[~front]))


def test_project_behind_camera_is_flagged():
    cam = Camera(np.eye(3), np.zeros(3), 1000.0, 1000.0, 960.0, 540.0, 1920, 1080)
    proj = project(np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1e-7]]), cam)
    assert not proj.in_front.any()
    assert not proj.in_frame.any()


def test_project_frame_bounds():
    cam = Camera(np.eye(3), np.zeros(3), 1000.0, 1000.0, 960.0, 540.0, 1920, 1080)
    # u = 0 は画像内、u = W は画像外
    X = np.array([[-960.0, 0.0, 1000.0], [960.0, 0.0, 1000.0], [0.0, 540.0, 1000.0]])
    proj = project(X, cam)
    assert proj.in_frame.tolist() == [True, False, False]
    assert proj.in_front.all()


@pytest.mark.parametrize("kwargs", [
    {"rotation": np.diag([1.0, 1.0, -1.0])},
    {"rotation": 2.0 * np.eye(3)},
    {"fx": 0.0},
    {"cx": 1920.0},
    {"cy": -1.0},
], ids=["reflection", "not_orthonormal", "focal", "cx", "cy"])
def test_camera_validation(kwargs):
    base = dict(rotation=np.eye(3), position=np.zeros(3), fx=1.0, fy=1.0, cx=10.0, cy=10.0, width=20, height=20)
    base.update(kwargs)
    with pytest.raises(CameraError):
        Camera(**base)


def test_camera_dict_round_trip():
    cam = random_camera(np.random.default_rng(3))
    again = Camera.from_dict(cam.to_dict())
    np.testing.assert_array_equal(again.rotation, cam.rotation)
    assert (again.fx, again.cy, again.width) == (cam.fx, cam.cy, cam.width)


def test_look_at_points_optical_axis_at_target():
    for position, target in (([1.0, 2.0, -3.0], [0.0, 1.0, 0.0]), ([0.0, 5.0, 0.0], [0.0, 0.0, 0.0])):
        R = look_at(position, target)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)
        direction = np.subtract(target, position)
        np.testing.assert_allclose(R[2], direction / np.linalg.norm(direction), atol=1e-12)


def test_look_at_same_point():
    with pytest.raises(CameraError):
        look_at([1.0, 1.0, 1.0], [1.0, 1.0, 1.0])


def test_sample_camera_point_mass():
    root = np.array([1.0, 0.9, -2.0])
    dist = CameraDistribution.point_mass(yaw=0.0, elevation=0.0, distance=3.0)
    cam = sample_camera(dist, root, rng_seed=5)
    np.testing.assert_allclose(cam.position, root + [0.0, 0.0, -3.0], atol=1e-12)
    np.testing.assert_allclose(project(root[None], cam).uv[0], [cam.cx, cam.cy], atol=1e-9)


def test_sample_camera_is_deterministic():
    dist = CameraDistribution()
    a = sample_camera(dist, np.zeros(3), 123)
    b = sample_camera(dist, np.zeros(3), 123)
    np.testing.assert_array_equal(a.rotation, b.rotation)
    np.testing.assert_array_equal(a.position, b.position)


def test_sampled_cameras_look_at_subject_root():
    dist = CameraDistribution(height=Factor(low=-0.5, high=1.0))
    root = np.array([0.3, 1.0, 4.0])
    for seed in range(50):
        cam = sample_camera(dist, root, seed)
        np.testing.assert_allclose(project(root[None], cam).uv[0], [cam.cx, cam.cy], atol=1.0)


def test_sample_camera_needs_distribution():
    with pytest.raises(CameraError):
        sample_camera(None, np.zeros(3), 0)


def test_sample_camera_uses_intrinsics():
    intrinsics = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)
    cam = sample_camera(CameraDistribution(), np.zeros(3), 0, intrinsics)
    assert (cam.fx, cam.width, cam.height) == (500.0, 640, 480)


def test_camera_angles_inverts_spherical_offset():
    root = np.array([2.0, 1.0, -1.0])
    for yaw, elevation, distance in ((1.0, 0.3, 4.0), (5.5, -0.4, 2.5), (3.0, 1.2, 6.0)):
        cam = Camera(look_at(root + spherical_offset(yaw, elevation, distance), root),
                     root + spherical_offset(yaw, elevation, distance), 1000.0, 1000.0, 960.0, 540.0, 1920, 1080)
        got = camera_angles(cam, root)
        np.testing.assert_allclose(got, (yaw, elevation, distance), atol=1e-9)


def test_uniform_elevation_sampling_is_uniform():
    dist = CameraDistribution()
    root = np.zeros(3)
    elevations = np.array([camera_angles(sample_camera(dist, root, seed), root)[1] for seed in range(10000)])
    low, high = math.radians(-30.0), math.radians(60.0)
    assert elevations.min() >= low - 1e-9 and elevations.max() <= high + 1e-9
    counts, _ = np.histogram(elevations, bins=9, range=(low, high))
    assert stats.chisquare(counts).pvalue > 1e-3


def test_histogram_factor_samples_only_weighted_bins():
    factor = Factor(edges=[0.0, 1.0, 2.0, 3.0], weights=[1.0, 0.0, 3.0])
    rng = np.random.default_rng(4)
    samples = np.array([factor.sample(rng) for _ in range(2000)])
    assert not np.any((samples >= 1.0) & (samples < 2.0))
    assert 0.2 < np.mean(samples < 1.0) < 0.3


@pytest.mark.parametrize("kwargs", [
    {"edges": [0.0, 1.0], "weights": [-1.0]},
    {"edges": [0.0, 1.0], "weights": [0.0]},
    {"edges": [1.0, 0.0], "weights": [1.0]},
    {"edges": [0.0, 1.0, 2.0], "weights": [1.0]},
    {"low": 2.0, "high": 1.0},
    {"low": 1.0},
], ids=["negative_weight", "zero_sum", "decreasing", "count_mismatch", "empty_range", "missing_high"])
def test_factor_validation(kwargs):
    with pytest.raises(ValueError):
        Factor(**kwargs)


def test_distribution_rejects_vertical_elevation():
    with pytest.raises(ValueError):
        CameraDistribution(elevation=Factor(low=0.0, high=math.pi / 2))
    with pytest.raises(ValueError):
        CameraDistribution(distance=Factor(low=0.0, high=1.0))


def test_distribution_file_uses_degrees(tmp_path):
    path = tmp_path / "cameras.json"
    dist = CameraDistribution(yaw=Factor(edges=[0.0, math.pi, 2.0 * math.pi], weights=[1.0, 2.0]))
    save_camera_distribution(dist, path)
    on_disk = json.loads(path.read_text(encoding="utf-8"))
    assert on_disk["yaw"]["edges"] == pytest.approx([0.0, 180.0, 360.0])
    assert on_disk["elevation"]["low"] == pytest.approx(-30.0)
    loaded = load_camera_distribution(path)
    np.testing.assert_allclose(loaded.yaw.edges, dist.yaw.edges, atol=1e-12)
    assert loaded.elevation.bounds() == pytest.approx(dist.elevation.bounds())


def test_distribution_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_camera_distribution(tmp_path / "missing.json")
    with pytest.raises(CameraError):
        CameraDistribution.from_file_dict({"format": "other"})
    with pytest.raises(CameraError):
        CameraDistribution.from_file_dict({"yaw": {"low": 10.0, "high": 0.0}})
