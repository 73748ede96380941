import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from errors import CameraError
from .schemas import CameraIntrinsics

# カメラ座標系: x 右, y 下, z 前方（世界座標は y 上）
EPS_Z = 1e-6
WORLD_UP = np.array([0.0, 1.0, 0.0])


class Projection(NamedTuple):
    uv: np.ndarray        # (..., 2) px、後方の点は nan
    in_frame: np.ndarray  # (...,) bool
    in_front: np.ndarray  # (...,) bool


@dataclass(frozen=True, eq=False)
class Camera:
    rotation: np.ndarray
    position: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64)
        pos = np.array(self.position, dtype=np.float64).reshape(-1)
        if R.shape != (3, 3) or pos.shape != (3,):
            raise CameraError("カメラの回転・位置の形状が不正です")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or np.linalg.det(R) <= 0:
            raise CameraError("カメラの回転が正規直交でありません")
        if self.fx <= 0 or self.fy <= 0:
            raise CameraError("焦点距離は正でなければなりません")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise CameraError("画像中心が画像の範囲外です")
        R.setflags(write=False)
        pos.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", pos)

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def world_to_cam(self, X):
        return world_to_cam(X, self)

    def project(self, X3D):
        return project(X3D, self)

    def to_dict(self):
        return {
            "rotation": self.rotation.tolist(),
            "position": self.position.tolist(),
            "f": [self.fx, self.fy],
            "c": [self.cx, self.cy],
            "image_size": [self.width, self.height],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            rotation=np.array(data["rotation"]),
            position=np.array(data["position"]),
            fx=float(data["f"][0]), fy=float(data["f"][1]),
            cx=float(data["c"][0]), cy=float(data["c"][1]),
            width=int(data["image_size"][0]), height=int(data["image_size"][1]),
        )


def world_to_cam(X, cam):
    """X_cam = R · (X − position)"""
    X = np.asarray(X, dtype=np.float64)
    return (X - cam.position) @ cam.rotation.T


def project(X3D, cam):
    """透視投影。Z ≤ ε の点は in_front=False とし uv は nan にする"""
    Xc = world_to_cam(X3D, cam)
    Z = Xc[..., 2]
    in_front = Z > EPS_Z
    safe_Z = np.where(in_front, Z, 1.0)
    u = cam.cx + cam.fx * Xc[..., 0] / safe_Z
    v = cam.cy + cam.fy * Xc[..., 1] / safe_Z
    uv = np.stack([u, v], axis=-1)
    uv[~in_front] = np.nan
    in_frame = in_front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return Projection(uv=uv, in_frame=in_frame, in_front=in_front)


def look_at(position, target):
    """position から target を向く world→camera 回転行列"""
    z = np.asarray(target, dtype=np.float64) - np.asarray(position, dtype=np.float64)
    norm = np.linalg.norm(z)
    if norm <= 0:
        raise CameraError("カメラ位置と注視点が一致しています")
    z = z / norm
    x = np.cross(-WORLD_UP, z)
    if np.linalg.norm(x) < 1e-9:
        # 真上・真下を向く場合は z 軸を上方向の代わりに使う
        x = np.cross(np.array([0.0, 0.0, -1.0]), z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def spherical_offset(yaw, elevation, distance):
    return distance * np.array([
        math.cos(elevation) * math.sin(yaw),
        math.sin(elevation),
        -math.cos(elevation) * math.cos(yaw),
    ])


def sample_camera(dist, subject_root, rng_seed, intrinsics=None):
    """分布からカメラ位置をサンプルし、被写体のルートを向くカメラを返す"""
    if dist is None:
        raise CameraError("カメラ分布が空です")
    intrinsics = intrinsics or CameraIntrinsics()
    rng = np.random.default_rng(rng_seed)

    yaw = dist.yaw.sample(rng)
    elevation = dist.elevation.sample(rng)
    distance = dist.distance.sample(rng)
    height = dist.height.sample(rng)

    root = np.asarray(subject_root, dtype=np.float64)
    position = root + spherical_offset(yaw, elevation, distance) + height * WORLD_UP
    return Camera(
        rotation=look_at(position, root),
        position=position,
        fx=intrinsics.fx, fy=intrinsics.fy,
        cx=intrinsics.cx, cy=intrinsics.cy,
        width=intrinsics.width, height=intrinsics.height,
    )


def camera_angles(cam, subject_root):
    """被写体ルートから見たカメラの (yaw, elevation, distance)"""
    offset = cam.position - np.asarray(subject_root, dtype=np.float64)
    distance = float(np.linalg.norm(offset))
    elevation = math.asin(max(-1.0, min(1.0, offset[1] / distance)))
    yaw = math.atan2(offset[0], -offset[2]) % (2.0 * math.pi)
    return yaw, elevation, distance
