"""
被写体（β）とモーションクリップのカタログ
"""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from body_model.kinematics import SHAPE_DIM, geodesic_angle, joint_regress, rodrigues
from errors import CatalogError

FPS = 30
MIN_FRAMES = 30
MAX_FRAMES = 80

# 手続き的クリップの振幅: 子孫まで FULL_REACH m 以上の関節は JOINT_AMPLITUDE
JOINT_AMPLITUDE = 0.35
ROOT_AMPLITUDE = 0.12
FULL_REACH = 0.3
MIN_AMPLITUDE_SCALE = 0.1
CLIP_MODES = 2


@dataclass(frozen=True, eq=False)
class Subject:
    name: str
    beta: np.ndarray


@dataclass(frozen=True, eq=False)
class MotionClip:
    name: str
    frames: np.ndarray           # (T, J, 3) 軸角
    root_trajectory: np.ndarray  # (T, 3) m
    fps: int = FPS

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        traj = np.asarray(self.root_trajectory, dtype=np.float64)
        T = len(frames)
        if not (MIN_FRAMES <= T <= MAX_FRAMES):
            raise CatalogError(f"クリップ長は {MIN_FRAMES}〜{MAX_FRAMES} フレームでなければなりません: {self.name} ({T})")
        if traj.shape != (T, 3):
            raise CatalogError(f"ルート軌跡の長さがフレーム数と一致しません: {self.name}")
        for t in range(1, T):
            for j in range(frames.shape[1]):
                if geodesic_angle(rodrigues(frames[t - 1, j]), rodrigues(frames[t, j])) >= math.pi / 2:
                    raise CatalogError(f"フレーム間の回転変化が大きすぎます: {self.name} t={t} j={j}")
        frames.setflags(write=False)
        traj.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "root_trajectory", traj)

    @property
    def length(self):
        return len(self.frames)


@dataclass(frozen=True)
class Catalogs:
    subjects: Tuple[Subject, ...]
    actions: Tuple[MotionClip, ...]

    def subject(self, index):
        if not 0 <= index < len(self.subjects):
            raise CatalogError(f"被写体IDがカタログにありません: {index}")
        return self.subjects[index]

    def action(self, index):
        if not 0 <= index < len(self.actions):
            raise CatalogError(f"アクションIDがカタログにありません: {index}")
        return self.actions[index]


def sample_subjects(rng, count, bound=2.0):
    return tuple(
        Subject(name=f"subject_{i:03d}", beta=rng.uniform(-bound, bound, SHAPE_DIM))
        for i in range(count)
    )


def joint_reach(tree):
    """基準姿勢で各関節から最も遠い子孫までの距離（m）。末端の関節は0"""
    rest = joint_regress(np.zeros(tree.shape_dim), tree)
    return np.array([
        float(np.linalg.norm(rest[desc] - rest[j], axis=1).max()) if desc.size else 0.0
        for j, desc in enumerate(tree.descendants)
    ])


def clip_amplitudes(tree):
    """関節ごとの回転の振幅（rad）。子孫までの距離が短い関節ほど小さくする"""
    scale = np.clip(joint_reach(tree) / FULL_REACH, MIN_AMPLITUDE_SCALE, 1.0)
    amplitude = JOINT_AMPLITUDE * scale
    amplitude[0] = ROOT_AMPLITUDE
    return amplitude


def procedural_clip(rng, tree, name):
    """
    関節ごとに半周期余弦の基底（両端で速度0）を重ねた、モーキャプ程度の速さの滑らかなクリップ。
    k 番目の基底の振幅は 1/k² で減衰する。
    """
    T = int(rng.integers(MIN_FRAMES, MAX_FRAMES + 1))
    J = tree.joint_count
    amplitude = clip_amplitudes(tree)
    modes = np.arange(1, CLIP_MODES + 1)
    basis = np.cos(math.pi * np.outer(np.arange(T) + 0.5, modes) / T)  # (T, K)
    coeffs = rng.uniform(-1.0, 1.0, size=(J, CLIP_MODES, 3)) / (modes**2)[None, :, None]
    offset = rng.uniform(-0.5, 0.5, size=(J, 3))
    frames = amplitude[None, :, None] * (offset[None] + np.einsum("tk,jkc->tjc", basis, coeffs))

    heading = rng.uniform(0.0, 2.0 * math.pi)
    speed = rng.uniform(0.3, 1.5)
    velocity = speed / FPS * np.array([math.sin(heading), 0.0, math.cos(heading)])
    traj = np.arange(T)[:, None] * velocity
    traj[:, 1] = 0.02 * np.sin(2.0 * math.pi * np.arange(T) / FPS)
    return MotionClip(name=name, frames=frames, root_trajectory=traj)


def _named(names, *joints):
    return all(j in names for j in joints)


def walk_clip(names, frames_count=72, cycles=2, speed=1.2):
    """両端で速度0になるよう、全チャネルを cos(位相) の関数にした歩行"""
    J = len(names)
    T = frames_count
    phase = 2.0 * math.pi * cycles * np.arange(T) / (T - 1)
    frames = np.zeros((T, J, 3))
    idx = {n: i for i, n in enumerate(names)}
    swing = np.cos(phase)
    frames[:, idx["left_hip"], 0] = -0.5 * swing
    frames[:, idx["right_hip"], 0] = 0.5 * swing
    frames[:, idx["left_knee"], 0] = 0.6 * (0.5 * (1.0 + swing)) ** 2
    frames[:, idx["right_knee"], 0] = 0.6 * (0.5 * (1.0 - swing)) ** 2
    frames[:, idx["left_shoulder"], 0] = 0.35 * swing
    frames[:, idx["right_shoulder"], 0] = -0.35 * swing
    frames[:, idx["left_elbow"], 0] = -0.3 - 0.1 * swing
    frames[:, idx["right_elbow"], 0] = -0.3 + 0.1 * swing
    frames[:, idx["left_shoulder"], 2] = -1.2
    frames[:, idx["right_shoulder"], 2] = 1.2
    traj = np.zeros((T, 3))
    traj[:, 2] = speed / FPS * np.arange(T)
    traj[:, 1] = 0.02 * np.cos(2.0 * phase)
    return MotionClip(name="walk", frames=frames, root_trajectory=traj)


def squat_clip(names, frames_count=70):
    J = len(names)
    T = frames_count
    depth = 0.5 * (1.0 - np.cos(2.0 * math.pi * np.arange(T) / (T - 1)))
    frames = np.zeros((T, J, 3))
    idx = {n: i for i, n in enumerate(names)}
    for side in ("left", "right"):
        frames[:, idx[f"{side}_hip"], 0] = -1.2 * depth
        frames[:, idx[f"{side}_knee"], 0] = 1.6 * depth
        frames[:, idx[f"{side}_ankle"], 0] = -0.4 * depth
        frames[:, idx[f"{side}_shoulder"], 0] = -1.0 * depth
    frames[:, idx["spine1"], 0] = 0.3 * depth
    traj = np.zeros((T, 3))
    traj[:, 1] = -0.4 * depth
    traj[:, 2] = -0.1 * depth
    return MotionClip(name="squat", frames=frames, root_trajectory=traj)


def build_catalogs(tree, seed=0, n_subjects=20, n_procedural=30):
    """固定シードから被写体とアクションのカタログを作る"""
    if n_subjects < 1:
        raise CatalogError("被写体カタログが空です")
    rng = np.random.default_rng(seed)
    subjects = sample_subjects(rng, n_subjects)
    actions = [procedural_clip(rng, tree, f"procedural_{i:03d}") for i in range(n_procedural)]
    limbs = ("left_hip", "right_hip", "left_knee", "right_knee", "left_ankle", "right_ankle",
             "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "spine1")
    if _named(tree.names, *limbs):
        actions += [walk_clip(tree.names), squat_clip(tree.names)]
    if not actions:
        raise CatalogError("アクションカタログが空です")
    return Catalogs(subjects=subjects, actions=tuple(actions))
