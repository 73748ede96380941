import json
import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from errors import DimensionError, TreeError

logger = logging.getLogger(__name__)

SHAPE_DIM = 10
BETA_BOUND = 5.0
TWO_PI = 2.0 * math.pi

TREE_FORMAT = "gtah-tree"
TREE_VERSION = 1

# 頭頂・鼻の補間係数（head + w * (head - neck)）
HEAD_TOP_WEIGHT = 1.3
NOSE_WEIGHT = 0.25
EXTRA_KEYPOINT_NAMES = ("head_top", "nose")

# SMPL準拠の24関節トポロジー
SMPL24_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1",
    "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3",
    "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
    "left_hand", "right_hand",
)
SMPL24_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

# 親関節からのオフセット（メートル、y軸が上）
SMPL24_OFFSETS = (
    (0.0, 0.92, 0.0),
    (0.07, -0.09, 0.0),
    (-0.07, -0.09, 0.0),
    (0.0, 0.11, -0.02),
    (0.035, -0.38, 0.005),
    (-0.035, -0.38, 0.005),
    (0.0, 0.13, 0.005),
    (-0.01, -0.40, -0.04),
    (0.01, -0.40, -0.04),
    (0.0, 0.055, 0.025),
    (0.02, -0.055, 0.12),
    (-0.02, -0.055, 0.12),
    (0.0, 0.21, -0.03),
    (0.08, 0.12, -0.015),
    (-0.08, 0.12, -0.015),
    (0.0, 0.09, 0.05),
    (0.12, 0.045, -0.01),
    (-0.12, 0.045, -0.01),
    (0.26, -0.01, -0.02),
    (-0.26, -0.01, -0.02),
    (0.25, 0.01, -0.005),
    (-0.25, 0.01, -0.005),
    (0.085, -0.01, -0.015),
    (-0.085, -0.01, -0.015),
)
LIMB_JOINTS = (4, 5, 7, 8, 18, 19, 20, 21)


@dataclass(frozen=True, eq=False)
class KinematicTree:
    """
    関節の木構造。parents[0] は -1（ルート）、その他は parent[i] < i を満たす。
    shape_blend は (J, 3, 10) で、β に対するオフセットの線形補正。
    """
    parents: np.ndarray
    rest_offsets: np.ndarray
    shape_blend: np.ndarray
    names: tuple

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        rest_offsets = np.asarray(self.rest_offsets, dtype=np.float64)
        shape_blend = np.asarray(self.shape_blend, dtype=np.float64)
        names = tuple(str(n) for n in self.names)
        J = len(parents)

        if J < 1:
            raise TreeError("関節数が0です")
        if rest_offsets.shape != (J, 3):
            raise TreeError(f"rest_offsets の形状が不正です: {rest_offsets.shape}")
        if shape_blend.ndim != 3 or shape_blend.shape[:2] != (J, 3):
            raise TreeError(f"shape_blend の形状が不正です: {shape_blend.shape}")
        if len(names) != J:
            raise TreeError("names の数が関節数と一致しません")
        if len(set(names)) != J:
            raise TreeError("関節名が重複しています")
        if parents[0] != -1 or np.any(parents[1:] < 0):
            raise TreeError("ルートはちょうど1つ（先頭）でなければなりません")
        for i in range(1, J):
            if parents[i] >= i:
                raise TreeError(f"親の順序が不正です: parent[{i}] = {parents[i]}")
        if not (np.all(np.isfinite(rest_offsets)) and np.all(np.isfinite(shape_blend))):
            raise TreeError("オフセットに非有限値があります")
        if J > 1 and np.any(np.linalg.norm(rest_offsets[1:], axis=1) <= 0.0):
            raise TreeError("ボーン長は正でなければなりません")

        for name, arr in (("parents", parents), ("rest_offsets", rest_offsets), ("shape_blend", shape_blend)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "names", names)

    @property
    def joint_count(self):
        return len(self.parents)

    @property
    def shape_dim(self):
        return self.shape_blend.shape[2]

    @cached_property
    def bones(self):
        """(親, 子) のボーン一覧"""
        return tuple((int(self.parents[i]), i) for i in range(1, self.joint_count))

    @cached_property
    def descendants(self):
        """各関節の（自身を含まない）子孫インデックス"""
        desc = [[] for _ in range(self.joint_count)]
        for i in range(self.joint_count - 1, 0, -1):
            p = self.parents[i]
            desc[p].append(i)
            desc[p].extend(desc[i])
        return tuple(np.array(sorted(d), dtype=np.int64) for d in desc)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise TreeError(f"関節が見つかりません: {name}") from None

    def to_dict(self):
        return {
            "format": TREE_FORMAT,
            "version": TREE_VERSION,
            "joint_count": self.joint_count,
            "parents": [int(p) for p in self.parents[1:]],
            "rest_offsets": self.rest_offsets.tolist(),
            "shape_blend": self.shape_blend.tolist(),
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format", TREE_FORMAT) != TREE_FORMAT:
            raise TreeError(f"ツリーファイルの形式が不正です: {data.get('format')}")
        try:
            J = int(data["joint_count"])
            parents = [-1] + [int(p) for p in data["parents"]]
            tree = cls(
                parents=np.array(parents),
                rest_offsets=np.array(data["rest_offsets"], dtype=np.float64),
                shape_blend=np.array(data["shape_blend"], dtype=np.float64),
                names=tuple(data["names"]),
            )
        except KeyError as e:
            raise TreeError(f"ツリーファイルに必要な項目がありません: {e}") from None
        if tree.joint_count != J:
            raise TreeError("joint_count と parents の長さが一致しません")
        return tree


def default_tree():
    """組み込みの24関節ツリー（SMPL風トポロジー）"""
    offsets = np.array(SMPL24_OFFSETS, dtype=np.float64)
    J = len(offsets)
    blend = np.zeros((J, 3, SHAPE_DIM))

    # β0: 身長、β1: 横幅、β2: 手足の長さ、β3以降: 固定の微小パターン
    blend[:, :, 0] = 0.06 * offsets
    blend[1:, 0, 1] = 0.08 * offsets[1:, 0]
    for i in LIMB_JOINTS:
        blend[i, :, 2] = 0.05 * offsets[i]
    rng = np.random.default_rng(24)
    blend[1:, :, 3:] = rng.normal(0.0, 0.002, size=(J - 1, 3, SHAPE_DIM - 3))

    return KinematicTree(
        parents=np.array(SMPL24_PARENTS),
        rest_offsets=offsets,
        shape_blend=blend,
        names=SMPL24_NAMES,
    )


def load_tree(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"ツリーファイルが見つかりません: {path}")
    with open(path, encoding="utf-8") as f:
        return KinematicTree.from_dict(json.load(f))


def save_tree(tree, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(tree.to_dict(), f, indent=1)
        f.write("\n")


def canonicalize_axis_angle(aa):
    """各関節の回転角を [0, 2π) に収める"""
    aa = np.array(aa, dtype=np.float64).reshape(-1, 3)
    norms = np.linalg.norm(aa, axis=1)
    wrap = norms >= TWO_PI
    if np.any(wrap):
        reduced = np.mod(norms[wrap], TWO_PI)
        aa[wrap] *= (reduced / norms[wrap])[:, None]
    return aa


@dataclass(frozen=True, eq=False)
class PoseParams:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.ndim == 1:
            if theta.size % 3:
                raise DimensionError(f"θ の次元が3の倍数ではありません: {theta.size}")
            theta = theta.reshape(-1, 3)
        if theta.ndim != 2 or theta.shape[1] != 3:
            raise DimensionError(f"θ の形状が不正です: {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise DimensionError("θ に非有限値があります")
        theta = canonicalize_axis_angle(theta)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zeros(cls, joint_count):
        return cls(np.zeros((joint_count, 3)))

    @property
    def flat(self):
        return self.theta.reshape(-1)


@dataclass(frozen=True, eq=False)
class ShapeParams:
    beta: np.ndarray = field(default_factory=lambda: np.zeros(SHAPE_DIM))

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(beta)):
            raise DimensionError("β に非有限値があります")
        if np.any(np.abs(beta) > BETA_BOUND + 1e-12):
            raise DimensionError(f"β は ±{BETA_BOUND} の範囲内でなければなりません")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)


@dataclass(frozen=True, eq=False)
class Translation:
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.array(self.t, dtype=np.float64).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise DimensionError("並進は有限の3次元ベクトルでなければなりません")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _so3_coefficients(angle):
    """sinθ/θ, (1-cosθ)/θ², (θ-sinθ)/θ³ を小角で安定に計算する"""
    if angle < 1e-4:
        a2 = angle * angle
        return 1.0 - a2 / 6.0 + a2 * a2 / 120.0, 0.5 - a2 / 24.0 + a2 * a2 / 720.0, 1.0 / 6.0 - a2 / 120.0
    s, c = math.sin(angle), math.cos(angle)
    return s / angle, (1.0 - c) / angle**2, (angle - s) / angle**3


def rodrigues(aa):
    """軸角ベクトルを回転行列に変換する"""
    aa = np.asarray(aa, dtype=np.float64).reshape(3)
    angle = float(np.linalg.norm(aa))
    A, B, _ = _so3_coefficients(angle)
    K = skew(aa)
    return np.eye(3) + A * K + B * (K @ K)


def rotation_log(R):
    """回転行列を軸角ベクトル（角度 [0, π]）に変換する"""
    R = np.asarray(R, dtype=np.float64)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * float(np.linalg.norm(w))
    c = 0.5 * (float(np.trace(R)) - 1.0)
    angle = math.atan2(s, c)
    if angle < 1e-4:
        return 0.5 * w * (1.0 + angle * angle / 6.0)
    if angle > math.pi - 1e-3:
        # π付近は対称部分から軸を求める
        S = 0.5 * (R + R.T)
        outer = (S - c * np.eye(3)) / (1.0 - c)
        k = int(np.argmax(np.diag(outer)))
        axis = outer[:, k] / math.sqrt(max(outer[k, k], 1e-300))
        if np.dot(axis, w) < 0.0:
            axis = -axis
        return angle * axis / np.linalg.norm(axis)
    return angle * w / (2.0 * s)


def geodesic_angle(R1, R2):
    return float(np.linalg.norm(rotation_log(R1.T @ R2)))


def right_jacobian(aa):
    angle = float(np.linalg.norm(aa))
    _, B, C = _so3_coefficients(angle)
    K = skew(aa)
    return np.eye(3) - B * K + C * (K @ K)


def batch_skew(v):
    """(N, 3) → (N, 3, 3) の歪対称行列"""
    v = np.asarray(v, dtype=np.float64).reshape(-1, 3)
    K = np.zeros((len(v), 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -v[:, 2], v[:, 1]
    K[:, 1, 0], K[:, 1, 2] = v[:, 2], -v[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -v[:, 1], v[:, 0]
    return K


def batch_right_jacobian(aa):
    """(N, 3) の軸角それぞれの右ヤコビアン J_r、形状 (N, 3, 3)"""
    aa = np.asarray(aa, dtype=np.float64).reshape(-1, 3)
    angle = np.linalg.norm(aa, axis=1)
    small = angle < 1e-4
    safe = np.where(small, 1.0, angle)
    a2 = angle * angle
    B = np.where(small, 0.5 - a2 / 24.0 + a2 * a2 / 720.0, (1.0 - np.cos(safe)) / safe**2)
    C = np.where(small, 1.0 / 6.0 - a2 / 120.0, (safe - np.sin(safe)) / safe**3)
    K = batch_skew(aa)
    return np.eye(3) - B[:, None, None] * K + C[:, None, None] * (K @ K)


def batch_right_jacobian_inv(aa):
    """J_r⁻¹、形状 (N, 3, 3)。左ヤコビアンの逆は J_l⁻¹(φ) = J_r⁻¹(−φ)"""
    aa = np.asarray(aa, dtype=np.float64).reshape(-1, 3)
    angle = np.linalg.norm(aa, axis=1)
    small = angle < 1e-4
    safe = np.where(small, 1.0, angle)
    a2 = angle * angle
    D = np.where(small, 1.0 / 12.0 + a2 / 720.0,
                 1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)))
    K = batch_skew(aa)
    return np.eye(3) + 0.5 * K + D[:, None, None] * (K @ K)


def _as_beta(beta, tree):
    beta = beta.beta if isinstance(beta, ShapeParams) else np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.shape != (tree.shape_dim,):
        raise DimensionError(f"β の次元 {beta.shape[0]} が shape_blend の次元 {tree.shape_dim} と一致しません")
    return beta


def _as_theta(theta, tree):
    theta = theta.theta if isinstance(theta, PoseParams) else np.asarray(theta, dtype=np.float64).reshape(-1, 3)
    if theta.shape != (tree.joint_count, 3):
        raise DimensionError(f"θ の関節数 {theta.shape[0]} がツリーの関節数 {tree.joint_count} と一致しません")
    return theta


def _as_translation(t):
    t = t.t if isinstance(t, Translation) else np.asarray(t, dtype=np.float64).reshape(-1)
    if t.shape != (3,):
        raise DimensionError("並進は3次元でなければなりません")
    return t


def bone_offsets(beta, tree):
    """親からのオフセット d_i = rest_offsets_i + shape_blend_i · β"""
    beta = _as_beta(beta, tree)
    return tree.rest_offsets + tree.shape_blend @ beta


def joint_regress(beta, tree):
    """β から基準姿勢の関節位置 J(β) を求める"""
    offsets = bone_offsets(beta, tree)
    joints = np.empty_like(offsets)
    joints[0] = offsets[0]
    for i in range(1, tree.joint_count):
        joints[i] = joints[tree.parents[i]] + offsets[i]
    return joints


def _global_chain(theta, offsets, t, parents):
    J = len(parents)
    rotations = np.empty((J, 3, 3))
    positions = np.empty((J, 3))
    rotations[0] = rodrigues(theta[0])
    positions[0] = offsets[0] + t
    for i in range(1, J):
        p = parents[i]
        positions[i] = positions[p] + rotations[p] @ offsets[i]
        rotations[i] = rotations[p] @ rodrigues(theta[i])
    return positions, rotations


def forward_kinematics(theta, beta, t, tree):
    """(θ, β, t) から世界座標の関節位置 X3D (J, 3) を求める"""
    theta = _as_theta(theta, tree)
    t = _as_translation(t)
    positions, _ = _global_chain(theta, bone_offsets(beta, tree), t, tree.parents)
    return positions


def keypoint_jacobians(theta, beta, t, tree):
    """
    関節位置とその解析的ヤコビアンを返す。
    戻り値: positions (J,3), d_theta (J,3,J,3), d_beta (J,3,B)。並進に対しては単位行列。
    """
    theta = _as_theta(theta, tree)
    t = _as_translation(t)
    offsets = bone_offsets(beta, tree)
    positions, rotations = _global_chain(theta, offsets, t, tree.parents)
    J = tree.joint_count

    d_theta = np.zeros((J, 3, J, 3))
    for k in range(J):
        desc = tree.descendants[k]
        if desc.size == 0:
            continue
        M = rotations[k] @ right_jacobian(theta[k])
        v = positions[desc] - positions[k]
        # 列 j: M[:, j] × v
        cols = np.cross(M.T[None, :, :], v[:, None, :])
        d_theta[desc, :, k, :] = cols.transpose(0, 2, 1)

    d_beta = np.empty((J, 3, tree.shape_dim))
    d_beta[0] = tree.shape_blend[0]
    for i in range(1, J):
        p = tree.parents[i]
        d_beta[i] = d_beta[p] + rotations[p] @ tree.shape_blend[i]
    return positions, d_theta, d_beta


def derive_extra_keypoints(X3D, tree):
    """頭頂と鼻を補間で追加する（入力 (..., J, 3) → (..., J+2, 3)）"""
    X3D = np.asarray(X3D, dtype=np.float64)
    head = X3D[..., tree.index("head"), :]
    neck = X3D[..., tree.index("neck"), :]
    head_top = head + HEAD_TOP_WEIGHT * (head - neck)
    nose = head + NOSE_WEIGHT * (head - neck)
    return np.concatenate([X3D, head_top[..., None, :], nose[..., None, :]], axis=-2)


def keypoint_names(tree):
    return tree.names + EXTRA_KEYPOINT_NAMES
