"""
データコレクタ相当: シナリオから正解付きの系列データを合成する
"""
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from body_model.kinematics import derive_extra_keypoints, forward_kinematics, rodrigues, rotation_log
from camera.model import Camera, project, sample_camera
from errors import DimensionError, SequenceFormatError
from scene_occlusion.raycast import body_capsules, label_frame
from .scenario import ScenarioSpec

logger = logging.getLogger(__name__)

SEQUENCE_FORMAT = "gtah-sequence"
SEQUENCE_VERSION = 1
SEQUENCE_SUFFIX = ".seq.json"


@dataclass(frozen=True, eq=False)
class GroundTruth:
    beta: np.ndarray         # (B,)
    theta: np.ndarray        # (T, J, 3)
    translation: np.ndarray  # (T, 3)


@dataclass(frozen=True, eq=False)
class SequenceData:
    spec: ScenarioSpec
    keypoints_3d: np.ndarray  # (T, J+2, 3) m
    keypoints_2d: np.ndarray  # (T, J+2, 2) px、カメラ後方は nan
    in_frame: np.ndarray      # (T, J+2) bool
    in_front: np.ndarray      # (T, J+2) bool
    occlusion: np.ndarray     # (T, J) OcclusionLabel
    camera: Camera
    ground_truth: Optional[GroundTruth] = None
    noise_sigma: float = 0.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        T = len(self.keypoints_3d)
        for name in ("keypoints_2d", "in_frame", "in_front", "occlusion"):
            if len(getattr(self, name)) != T:
                raise DimensionError(f"{name} のフレーム数が keypoints_3d と一致しません")
        if self.ground_truth is not None and len(self.ground_truth.theta) != T:
            raise DimensionError("正解パラメータのフレーム数が一致しません")

    @property
    def frame_count(self):
        return len(self.keypoints_3d)

    @property
    def sequence_id(self):
        return self.spec.sequence_id


def heading_rotation(heading):
    """鉛直（y）軸まわりの回転"""
    return rodrigues(np.array([0.0, heading, 0.0]))


def place_clip(clip, location, heading):
    """クリップを向き heading で location に置いたときの (θ_t, t_t)"""
    H = heading_rotation(heading)
    theta = np.array(clip.frames, dtype=np.float64)
    for t in range(len(theta)):
        theta[t, 0] = rotation_log(H @ rodrigues(theta[t, 0]))
    # ルート位置 = J(β)[0] + t_t。クリップの軌跡を回してから location に足す
    translation = np.asarray(location, dtype=np.float64) + clip.root_trajectory @ H.T
    return theta, translation


def _observe(X3D, tree, cam, scene, radii):
    """3Dキーポイント（J+2）から2D投影と遮蔽ラベルを求める"""
    J = tree.joint_count
    proj = project(X3D, cam)
    labels = np.empty((len(X3D), J), dtype=np.int8)
    for t in range(len(X3D)):
        capsules = body_capsules(X3D[t, :J], tree, radii)
        labels[t] = label_frame(X3D[t, :J], cam, scene, capsules, proj.in_front[t, :J])
    return proj, labels


def synthesize_sequence(spec, tree, scene, catalogs, camera_dist, intrinsics=None, radii=None, provenance=None):
    """シナリオから系列を合成する。provenance は系列のシードに加えて来歴に残す項目"""
    spec.check_catalogs(catalogs)
    subject = catalogs.subject(spec.subject_id)
    clip = catalogs.action(spec.action_id)
    if clip.frames.shape[1] != tree.joint_count:
        raise DimensionError(f"クリップの関節数 {clip.frames.shape[1]} がツリーと一致しません")
    beta = np.array(subject.beta, dtype=np.float64)

    theta, translation = place_clip(clip, spec.location, spec.heading)
    T = len(theta)

    native = np.array([forward_kinematics(theta[t], beta, translation[t], tree) for t in range(T)])
    X3D = derive_extra_keypoints(native, tree)

    cam = sample_camera(camera_dist, native[:, 0].mean(axis=0), spec.camera_seed, intrinsics)
    proj, labels = _observe(X3D, tree, cam, scene, radii)

    logger.debug("synth %s: T=%d subject=%d action=%s", spec.sequence_id, T, spec.subject_id, clip.name)
    return SequenceData(
        spec=spec,
        keypoints_3d=X3D,
        keypoints_2d=proj.uv,
        in_frame=proj.in_frame,
        in_front=proj.in_front,
        occlusion=labels,
        camera=cam,
        ground_truth=GroundTruth(beta=beta, theta=theta, translation=translation),
        noise_sigma=0.0,
        provenance={"seed": spec.seed, "camera_seed": spec.camera_seed, **(provenance or {})},
    )


def add_noise(seq, sigma, seed):
    """3Dキーポイントに i.i.d. ガウスノイズを加え、2Dを再投影する（正解と遮蔽ラベルは保持）"""
    if not (sigma >= 0) or not math.isfinite(sigma):
        raise ValueError(f"ノイズの標準偏差は0以上でなければなりません: {sigma}")
    if sigma == 0:
        return seq
    rng = np.random.default_rng(seed)
    X3D = seq.keypoints_3d + rng.normal(0.0, sigma, size=seq.keypoints_3d.shape)
    proj = project(X3D, seq.camera)
    provenance = {**seq.provenance, "noise_seed": int(seed)}
    return replace(
        seq,
        keypoints_3d=X3D,
        keypoints_2d=proj.uv,
        in_frame=proj.in_frame,
        in_front=proj.in_front,
        noise_sigma=float(seq.noise_sigma) + float(sigma),
        provenance=provenance,
    )


def _nullable(array):
    """nan を null にしたリスト"""
    return [_nullable(a) for a in array] if np.ndim(array) > 1 else [
        None if not math.isfinite(x) else float(x) for x in array
    ]


def _from_nullable(data):
    return np.array(data, dtype=np.float64)


def sequence_to_dict(seq):
    gt = seq.ground_truth
    return {
        "format": SEQUENCE_FORMAT,
        "version": SEQUENCE_VERSION,
        "spec": seq.spec.model_dump(),
        "frames": seq.frame_count,
        "keypoints_3d": seq.keypoints_3d.tolist(),
        "keypoints_2d": _nullable(seq.keypoints_2d),
        "in_frame": seq.in_frame.astype(int).tolist(),
        "in_front": seq.in_front.astype(int).tolist(),
        "occlusion": seq.occlusion.astype(int).tolist(),
        "camera": seq.camera.to_dict(),
        "ground_truth": None if gt is None else {
            "beta": gt.beta.tolist(),
            "theta": gt.theta.tolist(),
            "translation": gt.translation.tolist(),
        },
        "noise_sigma": seq.noise_sigma,
        "provenance": seq.provenance,
    }


def sequence_from_dict(data):
    if data.get("format") != SEQUENCE_FORMAT:
        raise SequenceFormatError(f"系列ファイルではありません: {data.get('format')}")
    try:
        gt = data.get("ground_truth")
        return SequenceData(
            spec=ScenarioSpec(**data["spec"]),
            keypoints_3d=np.array(data["keypoints_3d"], dtype=np.float64),
            keypoints_2d=_from_nullable(data["keypoints_2d"]),
            in_frame=np.array(data["in_frame"], dtype=bool),
            in_front=np.array(data["in_front"], dtype=bool),
            occlusion=np.array(data["occlusion"], dtype=np.int8),
            camera=Camera.from_dict(data["camera"]),
            ground_truth=None if gt is None else GroundTruth(
                beta=np.array(gt["beta"], dtype=np.float64),
                theta=np.array(gt["theta"], dtype=np.float64),
                translation=np.array(gt["translation"], dtype=np.float64),
            ),
            noise_sigma=float(data.get("noise_sigma", 0.0)),
            provenance=data.get("provenance", {}),
        )
    except KeyError as e:
        raise SequenceFormatError(f"系列ファイルに必要な項目がありません: {e}") from None


def save_sequence(seq, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(sequence_to_dict(seq), f)
        f.write("\n")


def load_sequence(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"系列ファイルが見つかりません: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise SequenceFormatError(f"系列ファイルを解析できません: {e}") from None
    return sequence_from_dict(data)
