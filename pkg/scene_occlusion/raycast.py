"""
レイキャストによる関節の可視判定（visible / occluded / self-occluded）
"""
import enum
import json
import math
import os
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

from errors import SceneError
from .schemas import BodyRadii

SCENE_FORMAT = "gtah-scene"
EPS_HIT = 1e-3        # 1mm 手前までのヒットのみ遮蔽とみなす
UNIT_TOL = 1e-9
SURFACE_TOL = 1e-6
DEGENERATE_BONE = 1e-9


class OcclusionLabel(enum.IntEnum):
    VISIBLE = 0
    OCCLUDED = 1
    SELF_OCCLUDED = 2


class RayHit(NamedTuple):
    index: int
    distance: float


def _vec(x):
    return np.asarray(x, dtype=np.float64).reshape(3)


def _sphere_roots(origin, direction, center, radius):
    oc = origin - center
    b = float(oc @ direction)
    c = float(oc @ oc) - radius * radius
    disc = b * b - c
    if disc < 0:
        return ()
    s = math.sqrt(disc)
    return (-b - s, -b + s)


def _segment_distance(p, p0, p1):
    axis = p1 - p0
    s = float(np.clip((p - p0) @ axis / (axis @ axis), 0.0, 1.0))
    return float(np.linalg.norm(p - (p0 + s * axis)))


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        if not self.radius > 0:
            raise SceneError("球の半径は正でなければなりません")

    def intersect(self, origin, direction):
        roots = [t for t in _sphere_roots(origin, direction, self.center, self.radius) if t > 0]
        return min(roots) if roots else None

    def signed_distance(self, p):
        return float(np.linalg.norm(p - self.center)) - self.radius

    def to_dict(self):
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Box:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", _vec(self.min))
        object.__setattr__(self, "max", _vec(self.max))
        if np.any(self.min >= self.max):
            raise SceneError("箱は min < max（成分ごと）でなければなりません")

    def intersect(self, origin, direction):
        # スラブ法
        t_near, t_far = -math.inf, math.inf
        for i in range(3):
            if abs(direction[i]) < 1e-15:
                if origin[i] < self.min[i] or origin[i] > self.max[i]:
                    return None
                continue
            t1 = (self.min[i] - origin[i]) / direction[i]
            t2 = (self.max[i] - origin[i]) / direction[i]
            t_near = max(t_near, min(t1, t2))
            t_far = min(t_far, max(t1, t2))
        if t_near > t_far or t_far <= 0:
            return None
        return t_near if t_near > 0 else t_far

    def signed_distance(self, p):
        center = 0.5 * (self.min + self.max)
        half = 0.5 * (self.max - self.min)
        q = np.abs(p - center) - half
        return float(np.linalg.norm(np.maximum(q, 0.0)) + min(max(q[0], q[1], q[2]), 0.0))

    def to_dict(self):
        return {"type": "box", "min": self.min.tolist(), "max": self.max.tolist()}


@dataclass(frozen=True, eq=False)
class Capsule:
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "p0", _vec(self.p0))
        object.__setattr__(self, "p1", _vec(self.p1))
        if not self.radius > 0:
            raise SceneError("カプセルの半径は正でなければなりません")
        if np.linalg.norm(self.p1 - self.p0) <= 0:
            raise SceneError("カプセルの両端点が一致しています")

    def intersect(self, origin, direction):
        candidates = list(_sphere_roots(origin, direction, self.p0, self.radius))
        candidates += _sphere_roots(origin, direction, self.p1, self.radius)

        axis = self.p1 - self.p0
        length = float(np.linalg.norm(axis))
        a = axis / length
        w = origin - self.p0
        d_perp = direction - (direction @ a) * a
        w_perp = w - (w @ a) * a
        A = float(d_perp @ d_perp)
        if A > 1e-15:
            B = 2.0 * float(d_perp @ w_perp)
            C = float(w_perp @ w_perp) - self.radius**2
            disc = B * B - 4.0 * A * C
            if disc >= 0:
                s = math.sqrt(disc)
                for t in ((-B - s) / (2.0 * A), (-B + s) / (2.0 * A)):
                    axial = float((w + t * direction) @ a)
                    if 0.0 <= axial <= length:
                        candidates.append(t)

        # 和集合の境界上にある点だけを残す
        hits = [
            t for t in candidates
            if t > 0 and abs(_segment_distance(origin + t * direction, self.p0, self.p1) - self.radius) < SURFACE_TOL
        ]
        return min(hits) if hits else None

    def signed_distance(self, p):
        return _segment_distance(p, self.p0, self.p1) - self.radius

    def to_dict(self):
        return {"type": "capsule", "p0": self.p0.tolist(), "p1": self.p1.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Primitive:
    """シーン形状と所有者。bone が None なら環境、(親, 子) なら被写体のボーン"""
    shape: object
    bone: Optional[Tuple[int, int]] = None

    @property
    def is_environment(self):
        return self.bone is None

    def incident_to(self, joint):
        return self.bone is not None and joint in self.bone


def _check_direction(direction):
    norm = float(np.linalg.norm(direction))
    if abs(norm - 1.0) > UNIT_TOL:
        raise SceneError(f"レイの方向が単位ベクトルではありません: |d| = {norm}")


def ray_cast(origin, direction, scene):
    """最も近い正距離の交点を返す（なければ None）"""
    origin = _vec(origin)
    direction = _vec(direction)
    _check_direction(direction)
    best = None
    for i, prim in enumerate(scene):
        t = prim.shape.intersect(origin, direction)
        if t is not None and (best is None or t < best.distance):
            best = RayHit(i, t)
    return best


def body_capsules(X3D, tree, radii=None):
    """親子ボーンごとのカプセル（端点が一致する場合は同半径の球）"""
    if radii is None:
        radii = BodyRadii()
    elif isinstance(radii, (int, float)):
        radii = BodyRadii(default=float(radii))
    X3D = np.asarray(X3D, dtype=np.float64)
    prims = []
    for parent, child in tree.bones:
        r = radii.radius_for(tree.names[child])
        p0, p1 = X3D[parent], X3D[child]
        if np.linalg.norm(p1 - p0) < DEGENERATE_BONE:
            shape = Sphere(center=p0, radius=r)
        else:
            shape = Capsule(p0=p0, p1=p1, radius=r)
        prims.append(Primitive(shape=shape, bone=(parent, child)))
    return prims


def classify_joint(joint, X3D, cam, env, capsules):
    """カメラから関節へのレイで最初に当たる物体を調べてラベルを決める"""
    target = np.asarray(X3D, dtype=np.float64)[joint]
    if cam.world_to_cam(target)[2] <= 0:
        raise SceneError(f"関節 {joint} がカメラの後方にあります")
    origin = cam.position
    ray = target - origin
    reach = float(np.linalg.norm(ray))
    direction = ray / reach

    nearest = None
    for prim in list(env) + [c for c in capsules if not c.incident_to(joint)]:
        t = prim.shape.intersect(origin, direction)
        if t is None or t >= reach - EPS_HIT:
            continue
        # 同距離の場合は環境を優先（並び順に依存しない）
        key = (t, 0 if prim.is_environment else 1)
        if nearest is None or key < nearest[0]:
            nearest = (key, prim)

    if nearest is None:
        return OcclusionLabel.VISIBLE
    return OcclusionLabel.OCCLUDED if nearest[1].is_environment else OcclusionLabel.SELF_OCCLUDED


def label_frame(X3D, cam, env, capsules, in_front):
    """1フレーム分の全関節のラベル。カメラ後方の関節は OCCLUDED とする"""
    labels = np.empty(len(X3D), dtype=np.int8)
    for j in range(len(X3D)):
        if not in_front[j]:
            labels[j] = OcclusionLabel.OCCLUDED
        else:
            labels[j] = classify_joint(j, X3D, cam, env, capsules)
    return labels


def primitive_from_dict(data):
    kind = data.get("type")
    try:
        if kind == "sphere":
            return Primitive(Sphere(center=data["center"], radius=float(data["radius"])))
        if kind == "box":
            return Primitive(Box(min=data["min"], max=data["max"]))
        if kind == "capsule":
            return Primitive(Capsule(p0=data["p0"], p1=data["p1"], radius=float(data["radius"])))
    except KeyError as e:
        raise SceneError(f"形状に必要な項目がありません: {e}") from None
    raise SceneError(f"未対応の形状です: {kind}")


def load_scene(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"シーンファイルが見つかりません: {path}")
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if data.get("format", SCENE_FORMAT) != SCENE_FORMAT:
        raise SceneError("シーンファイルの形式が不正です")
    return [primitive_from_dict(p) for p in data.get("primitives", [])]


def save_scene(scene, path):
    data = {
        "format": SCENE_FORMAT,
        "version": 1,
        "primitives": [p.shape.to_dict() for p in scene if p.is_environment],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=1)
        f.write("\n")
