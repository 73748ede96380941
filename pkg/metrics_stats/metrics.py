"""
評価指標: MPJPE と Procrustes 位置合わせ後の PA-MPJPE（単位 mm）
"""
from dataclasses import dataclass

import numpy as np

from errors import DegenerateAlignment, DimensionError

RANK_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float
    aligned: np.ndarray

    def apply(self, points):
        return self.scale * np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise DimensionError(f"予測と正解の形状が一致しません: {pred.shape} / {gt.shape}")
    return pred, gt


def mpjpe(pred, gt):
    """関節ごとのユークリッド距離の平均 ×1000"""
    pred, gt = _pair(pred, gt)
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)) * 1000.0)


def procrustes_align(pred, gt, scale=True):
    """
    Σ‖s·R·pred_j + t − gt_j‖² を最小にする相似変換（Umeyama）。
    反射は det 補正で除外する。scale=False なら s=1 の剛体変換。
    """
    pred, gt = _pair(pred, gt)
    if pred.ndim != 2 or len(pred) < 3:
        raise DimensionError("位置合わせには3点以上の (J, 3) 配列が必要です")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    P = pred - mu_p
    G = gt - mu_g

    sv = np.linalg.svd(G, compute_uv=False)
    if sv[0] <= RANK_TOL or sv[1] <= RANK_TOL * max(1.0, sv[0]):
        raise DegenerateAlignment("正解の点群が縮退しています（ランク < 2）")
    var_p = float(np.sum(P * P)) / len(P)
    if var_p <= 0:
        raise DegenerateAlignment("予測の点群が1点に縮退しています")

    U, S, Vt = np.linalg.svd(G.T @ P / len(P))
    D = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[-1] = -1.0
    R = (U * D) @ Vt
    s = float(np.sum(S * D) / var_p) if scale else 1.0
    if s <= 0:
        raise DegenerateAlignment("スケールが正になりません")
    t = mu_g - s * R @ mu_p
    return AlignmentResult(rotation=R, translation=t, scale=s, aligned=s * pred @ R.T + t)


def pa_mpjpe(pred, gt, scale=True):
    """位置合わせ後の MPJPE。(T, J, 3) ならフレームごとに合わせて平均する"""
    pred, gt = _pair(pred, gt)
    if pred.ndim == 3:
        return float(np.mean([pa_mpjpe(p, g, scale) for p, g in zip(pred, gt)]))
    return mpjpe(procrustes_align(pred, gt, scale).aligned, gt)
