import numpy as np
import pytest

from analyser.schemas import Thresholds
from app import create_app
from body_model.kinematics import SHAPE_DIM, KinematicTree, default_tree, save_tree
from camera.model import Camera
from config import CatalogConfig, PathsConfig, ToolchainConfig
from fitter.schemas import FitConfig
from pipeline.schemas import PipelineSettings
from synth_engine.catalogs import build_catalogs
from synth_engine.scenario import ScenarioSpec
from synth_engine.sequence import SequenceData

# 頭・首を持つ6関節の小さなツリー（体幹から左右の腕が分岐）
TOY_NAMES = ("pelvis", "spine", "neck", "head", "left_arm", "right_arm")
TOY_PARENTS = (-1, 0, 1, 2, 1, 1)
TOY_OFFSETS = (
    (0.0, 0.9, 0.0),
    (0.0, 0.3, 0.0),
    (0.0, 0.25, 0.0),
    (0.0, 0.12, 0.02),
    (0.35, 0.2, 0.0),
    (-0.35, 0.2, 0.0),
)


def make_tree(parents, offsets, names, blend_scale=0.01, seed=3):
    offsets = np.asarray(offsets, dtype=np.float64)
    rng = np.random.default_rng(seed)
    blend = rng.normal(0.0, blend_scale, size=(len(offsets), 3, SHAPE_DIM))
    return KinematicTree(parents=np.array(parents), rest_offsets=offsets, shape_blend=blend, names=names)


@pytest.fixture(scope="session")
def toy_tree():
    return make_tree(TOY_PARENTS, TOY_OFFSETS, TOY_NAMES)


@pytest.fixture(scope="session")
def tree():
    return default_tree()


@pytest.fixture(scope="session")
def catalogs(tree):
    return build_catalogs(tree, seed=0, n_subjects=3, n_procedural=3)


@pytest.fixture(scope="session")
def toy_catalogs(toy_tree):
    return build_catalogs(toy_tree, seed=0, n_subjects=3, n_procedural=4)


@pytest.fixture
def front_camera():
    """z 軸正方向を向く、原点の5m手前のカメラ"""
    return Camera(rotation=np.eye(3), position=np.array([0.0, 0.0, -5.0]),
                  fx=1000.0, fy=1000.0, cx=960.0, cy=540.0, width=1920, height=1080)


@pytest.fixture
def make_sequence(front_camera):
    def build(points, occlusion=None, in_frame=None):
        points = np.asarray(points, dtype=np.float64)
        T, K = points.shape[:2]
        return SequenceData(
            spec=ScenarioSpec(sequence_id="seq_test", seed=0, subject_id=0, action_id=0,
                              location=[0.0, 0.0, 0.0], camera_seed=0),
            keypoints_3d=points,
            keypoints_2d=np.zeros((T, K, 2)),
            in_frame=np.ones((T, K), dtype=bool) if in_frame is None else np.asarray(in_frame, dtype=bool),
            in_front=np.ones((T, K), dtype=bool),
            occlusion=np.zeros((T, K), dtype=np.int8) if occlusion is None else np.asarray(occlusion, dtype=np.int8),
            camera=front_camera,
        )
    return build


@pytest.fixture
def quick_fit():
    return FitConfig(max_frame_iterations=30, max_joint_iterations=10)


@pytest.fixture
def toolchain_config(tmp_path, toy_tree, quick_fit):
    tree_path = tmp_path / "toy_tree.json"
    save_tree(toy_tree, tree_path)
    return ToolchainConfig(
        paths=PathsConfig(tree=str(tree_path), output_dir=str(tmp_path / "out")),
        catalog=CatalogConfig(n_subjects=3, n_procedural_clips=4),
        thresholds=Thresholds(min_speed=0.0, max_occluded=1.0, max_out_of_frame=1.0),
        fit=quick_fit,
        pipeline=PipelineSettings(sequences=3, poll_interval=0.005),
        log_level="WARNING",
    )


@pytest.fixture
def app(toolchain_config):
    app = create_app(toolchain_config)
    app.config.update({"TESTING": True})
    yield app


@pytest.fixture
def runner(app):
    return app.test_cli_runner()
