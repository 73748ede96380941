"""
データアナライザ: 静止・重度の遮蔽・画面外の系列を注釈前に弾く
"""
import enum
import logging
from dataclasses import dataclass
from typing import FrozenSet

import numpy as np

from errors import DimensionError
from scene_occlusion.raycast import OcclusionLabel
from .schemas import Thresholds

logger = logging.getLogger(__name__)


class Reason(str, enum.Enum):
    STATIONARY = "Stationary"
    SEVERE_OCCLUSION = "SevereOcclusion"
    OUT_OF_VIEW = "OutOfView"


@dataclass(frozen=True)
class QualityReport:
    reasons: FrozenSet[Reason]
    mean_speed: float
    occluded_fraction: float
    out_of_frame_fraction: float

    @property
    def passed(self):
        return not self.reasons

    def to_dict(self):
        return {
            "pass": self.passed,
            "reasons": sorted(r.value for r in self.reasons),
            "mean_speed": self.mean_speed,
            "occluded_fraction": self.occluded_fraction,
            "out_of_frame_fraction": self.out_of_frame_fraction,
        }


def joint_speed(seq_or_points):
    """
    フレームごとの平均関節速度 speed_t = mean_j ‖X[t,j] − X[t−1,j]‖ と系列平均を返す。
    入力は SequenceData か (T, K, 3) 配列。
    """
    X = np.asarray(getattr(seq_or_points, "keypoints_3d", seq_or_points), dtype=np.float64)
    if X.ndim != 3 or X.shape[-1] != 3:
        raise DimensionError(f"キーポイントの形状が不正です: {X.shape}")
    if len(X) < 2:
        raise DimensionError("速度の計算には2フレーム以上必要です")
    speeds = np.linalg.norm(np.diff(X, axis=0), axis=-1).mean(axis=1)
    return speeds, float(speeds.mean())


def quality_gate(seq, thresholds=None):
    thresholds = thresholds or Thresholds()
    J = seq.occlusion.shape[1]
    # 2フレーム未満では動きを測れないので静止として弾く
    moving = len(seq.keypoints_3d) >= 2
    mean_speed = joint_speed(seq)[1] if moving else 0.0

    # 遮蔽率は VISIBLE 以外（環境・自己遮蔽とも）の割合
    occluded = float(np.mean(np.asarray(seq.occlusion) != OcclusionLabel.VISIBLE))
    out_of_frame = float(np.mean(~np.asarray(seq.in_frame, dtype=bool)[:, :J]))

    reasons = set()
    if not moving or not mean_speed >= thresholds.min_speed:
        reasons.add(Reason.STATIONARY)
    if occluded > thresholds.max_occluded:
        reasons.add(Reason.SEVERE_OCCLUSION)
    if out_of_frame > thresholds.max_out_of_frame:
        reasons.add(Reason.OUT_OF_VIEW)

    report = QualityReport(
        reasons=frozenset(reasons),
        mean_speed=mean_speed,
        occluded_fraction=occluded,
        out_of_frame_fraction=out_of_frame,
    )
    logger.debug("quality %s: %s", getattr(seq, "sequence_id", "?"), report.to_dict())
    return report
