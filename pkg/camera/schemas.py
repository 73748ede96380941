import json
import math
import os
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from errors import CameraError

DISTRIBUTION_FORMAT = "gtah-camera-distribution"
ANGLE_FACTORS = ("yaw", "elevation")


class Factor(BaseModel):
    """一様分布の範囲、またはヒストグラム（edges + weights）"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    low: Optional[float] = None
    high: Optional[float] = None
    edges: Optional[List[float]] = None
    weights: Optional[List[float]] = None

    @model_validator(mode="after")
    def check_factor(self):
        if self.edges is not None or self.weights is not None:
            if self.edges is None or self.weights is None:
                raise ValueError("ヒストグラムには edges と weights の両方が必要です")
            if len(self.edges) != len(self.weights) + 1 or not self.weights:
                raise ValueError("edges の数は weights の数 + 1 でなければなりません")
            if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
                raise ValueError("edges は単調増加でなければなりません")
            if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
                raise ValueError("weights は非負かつ総和が正でなければなりません")
        else:
            if self.low is None or self.high is None:
                raise ValueError("範囲には low と high が必要です")
            if not (math.isfinite(self.low) and math.isfinite(self.high)) or self.low > self.high:
                raise ValueError(f"範囲が空です: [{self.low}, {self.high}]")
        return self

    @property
    def is_histogram(self):
        return self.edges is not None

    def sample(self, rng):
        if self.is_histogram:
            w = [x / sum(self.weights) for x in self.weights]
            k = int(rng.choice(len(w), p=w))
            return float(rng.uniform(self.edges[k], self.edges[k + 1]))
        return float(rng.uniform(self.low, self.high))

    def bounds(self):
        if self.is_histogram:
            return self.edges[0], self.edges[-1]
        return self.low, self.high

    def scaled(self, k):
        """単位変換（度 ↔ ラジアン）"""
        if self.is_histogram:
            return Factor(edges=[e * k for e in self.edges], weights=list(self.weights))
        return Factor(low=self.low * k, high=self.high * k)


class CameraDistribution(BaseModel):
    """カメラ配置の分布（メモリ上の角度はラジアン）"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    yaw: Factor = Factor(low=0.0, high=2.0 * math.pi)
    elevation: Factor = Factor(low=math.radians(-30.0), high=math.radians(60.0))
    distance: Factor = Factor(low=2.0, high=6.0)
    height: Factor = Factor(low=0.0, high=0.0)

    @model_validator(mode="after")
    def check_ranges(self):
        lo, hi = self.elevation.bounds()
        if lo <= -math.pi / 2 or hi >= math.pi / 2:
            raise ValueError("仰角は (-90°, 90°) の範囲でなければなりません")
        if self.distance.bounds()[0] <= 0:
            raise ValueError("距離は正でなければなりません")
        return self

    @classmethod
    def point_mass(cls, yaw=0.0, elevation=0.0, distance=3.0, height=0.0):
        return cls(
            yaw=Factor(low=yaw, high=yaw),
            elevation=Factor(low=elevation, high=elevation),
            distance=Factor(low=distance, high=distance),
            height=Factor(low=height, high=height),
        )

    def to_file_dict(self):
        data = {"format": DISTRIBUTION_FORMAT, "version": 1}
        for name in ("yaw", "elevation", "distance", "height"):
            factor = getattr(self, name)
            if name in ANGLE_FACTORS:
                factor = factor.scaled(180.0 / math.pi)
            data[name] = factor.model_dump(exclude_none=True)
        return data

    @classmethod
    def from_file_dict(cls, data):
        data = dict(data)
        if data.pop("format", DISTRIBUTION_FORMAT) != DISTRIBUTION_FORMAT:
            raise CameraError("カメラ分布ファイルの形式が不正です")
        data.pop("version", None)
        try:
            factors = {name: Factor(**value) for name, value in data.items()}
            for name in ANGLE_FACTORS:
                if name in factors:
                    factors[name] = factors[name].scaled(math.pi / 180.0)
            return cls(**factors)
        except (ValidationError, TypeError) as e:
            raise CameraError(f"カメラ分布が不正です: {e}") from None


class CameraIntrinsics(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    fx: float = 1158.0
    fy: float = 1158.0
    cx: float = 960.0
    cy: float = 540.0
    width: int = 1920
    height: int = 1080


def load_camera_distribution(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"カメラ分布ファイルが見つかりません: {path}")
    with open(path, encoding="utf-8") as f:
        return CameraDistribution.from_file_dict(json.load(f))


def save_camera_distribution(dist, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(dist.to_file_dict(), f, indent=1)
        f.write("\n")
