import math

import numpy as np
import pytest

from analyser.quality import Reason, joint_speed, quality_gate
from analyser.schemas import Thresholds
from errors import DimensionError
from scene_occlusion.raycast import OcclusionLabel


def walking_points(frames=10, joints=6, step=0.25):
    base = 0.5 * np.arange(joints * 3, dtype=np.float64).reshape(1, joints, 3)
    return base + np.arange(frames)[:, None, None] * np.array([step, 0.0, 0.0])


def test_joint_speed_constant_velocity():
    speeds, mean = joint_speed(walking_points())
    np.testing.assert_allclose(speeds, np.full(9, 0.25))
    assert mean == 0.25


def test_joint_speed_static_and_errors():
    static = np.zeros((5, 4, 3))
    speeds, mean = joint_speed(static)
    assert mean == 0.0 and speeds.shape == (4,)
    with pytest.raises(DimensionError):
        joint_speed(np.zeros((1, 4, 3)))
    with pytest.raises(DimensionError):
        joint_speed(np.zeros((5, 4, 2)))


def test_joint_speed_accepts_sequence(make_sequence):
    assert joint_speed(make_sequence(walking_points()))[1] == 0.25


def test_moving_visible_sequence_passes(make_sequence):
    report = quality_gate(make_sequence(walking_points()))
    assert report.passed
    assert report.to_dict()["reasons"] == []
    assert report.occluded_fraction == 0.0 and report.out_of_frame_fraction == 0.0


def test_stationary_sequence_is_rejected(make_sequence):
    report = quality_gate(make_sequence(np.zeros((10, 6, 3))))
    assert report.reasons == {Reason.STATIONARY}
    assert not report.passed


def test_single_frame_sequence_is_stationary(make_sequence):
    seq = make_sequence(walking_points(frames=1))
    for thresholds in (Thresholds(), Thresholds(min_speed=0.0)):
        report = quality_gate(seq, thresholds)
        assert report.reasons == {Reason.STATIONARY}
        assert report.mean_speed == 0.0
    assert report.to_dict()["reasons"] == ["Stationary"]


def test_speed_threshold_is_inclusive(make_sequence):
    seq = make_sequence(walking_points())
    assert quality_gate(seq, Thresholds(min_speed=0.25)).passed
    assert not quality_gate(seq, Thresholds(min_speed=0.2500001)).passed


def test_infinite_speed_threshold_rejects_everything(make_sequence):
    report = quality_gate(make_sequence(walking_points(step=100.0)), Thresholds(min_speed=math.inf))
    assert Reason.STATIONARY in report.reasons


def test_occlusion_counts_environment_and_self(make_sequence):
    occlusion = np.zeros((10, 6), dtype=np.int8)
    occlusion[:, :2] = OcclusionLabel.OCCLUDED
    occlusion[:5, 2:4] = OcclusionLabel.SELF_OCCLUDED
    report = quality_gate(make_sequence(walking_points(), occlusion=occlusion))
    assert report.occluded_fraction == pytest.approx(0.5)
    assert report.passed
    report = quality_gate(make_sequence(walking_points(), occlusion=occlusion), Thresholds(max_occluded=0.4))
    assert report.reasons == {Reason.SEVERE_OCCLUSION}


def test_occlusion_threshold_is_exclusive(make_sequence):
    occlusion = np.zeros((10, 5), dtype=np.int8)
    occlusion[:, :3] = OcclusionLabel.OCCLUDED
    seq = make_sequence(walking_points(joints=5), occlusion=occlusion)
    assert quality_gate(seq, Thresholds(max_occluded=0.6)).passed


def test_out_of_frame_fraction(make_sequence):
    in_frame = np.ones((10, 6), dtype=bool)
    in_frame[:, :4] = False
    report = quality_gate(make_sequence(walking_points(), in_frame=in_frame))
    assert report.out_of_frame_fraction == pytest.approx(4 / 6)
    assert report.reasons == {Reason.OUT_OF_VIEW}


def test_out_of_frame_ignores_extra_keypoints(make_sequence):
    points = walking_points(joints=8)
    in_frame = np.ones((10, 8), dtype=bool)
    in_frame[:, 6:] = False
    seq = make_sequence(points, occlusion=np.zeros((10, 6), dtype=np.int8), in_frame=in_frame)
    assert quality_gate(seq).out_of_frame_fraction == 0.0


def test_all_reasons_reported_together(make_sequence):
    occlusion = np.full((10, 6), OcclusionLabel.OCCLUDED, dtype=np.int8)
    seq = make_sequence(np.zeros((10, 6, 3)), occlusion=occlusion, in_frame=np.zeros((10, 6), dtype=bool))
    report = quality_gate(seq)
    assert report.to_dict()["reasons"] == ["OutOfView", "SevereOcclusion", "Stationary"]
    assert report.to_dict()["pass"] is False


def test_threshold_validation():
    with pytest.raises(ValueError):
        Thresholds(max_occluded=1.5)
    with pytest.raises(ValueError):
        Thresholds(min_speed=-0.1)
    assert Thresholds(min_speed=math.inf).min_speed == math.inf
