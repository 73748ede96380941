import numpy as np
from scipy.spatial.transform import Rotation

from body_model.kinematics import PoseParams, ShapeParams, forward_kinematics
from camera.model import project
from errors import DimensionError, FitError


def _masked_norm(pred, target, mask, width):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, width)
    target = np.asarray(target, dtype=np.float64).reshape(-1, width)
    if pred.shape != target.shape:
        raise DimensionError(f"形状が一致しません: {pred.shape} / {target.shape}")
    mask = np.ones(len(pred), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape != (len(pred),):
        raise DimensionError("マスクの長さが関節数と一致しません")
    if not mask.any():
        raise FitError("有効な関節がありません（マスクが空です）")
    diff = pred[mask] - target[mask]
    return float(np.sqrt(np.sum(diff * diff)))


def loss_3d(pred, target, mask=None):
    """マスクされた関節の3D誤差の二乗和平方根（m）"""
    return _masked_norm(pred, target, mask, 3)


def loss_2d(pred, target, mask=None):
    """マスクされた関節の2D誤差の二乗和平方根（px）"""
    return _masked_norm(pred, target, mask, 2)


def loss_smpl(pred, target):
    """||θ − θ̂|| + ||β − β̂||。pred, target は (θ, β) の組"""
    pred_theta, pred_beta = pred
    target_theta, target_beta = target
    pred_theta = pred_theta.flat if isinstance(pred_theta, PoseParams) else np.ravel(pred_theta)
    target_theta = target_theta.flat if isinstance(target_theta, PoseParams) else np.ravel(target_theta)
    pred_beta = pred_beta.beta if isinstance(pred_beta, ShapeParams) else np.ravel(pred_beta)
    target_beta = target_beta.beta if isinstance(target_beta, ShapeParams) else np.ravel(target_beta)
    if pred_theta.shape != target_theta.shape or pred_beta.shape != target_beta.shape:
        raise DimensionError("θ または β の次元が一致しません")
    return float(np.linalg.norm(pred_theta - target_theta) + np.linalg.norm(pred_beta - target_beta))


def relative_rotation_vectors(theta_seq):
    """連続フレーム間の各関節の相対回転ベクトル log(R_{t-1}ᵀ R_t)、形状 (T-1, J, 3)"""
    theta_seq = np.asarray(theta_seq, dtype=np.float64)
    T, J = theta_seq.shape[:2]
    if T < 2:
        return np.zeros((0, J, 3))
    prev = Rotation.from_rotvec(theta_seq[:-1].reshape(-1, 3))
    curr = Rotation.from_rotvec(theta_seq[1:].reshape(-1, 3))
    return (prev.inv() * curr).as_rotvec().reshape(T - 1, J, 3)


def smoothness_term(theta_seq):
    """Σ_t Σ_j d_geo(R_{t,j}, R_{t-1,j})²（rad²）"""
    theta_seq = np.asarray(theta_seq, dtype=np.float64)
    if theta_seq.ndim == 2:
        theta_seq = theta_seq.reshape(len(theta_seq), -1, 3)
    if len(theta_seq) < 1:
        raise DimensionError("フレームが1つもありません")
    phi = relative_rotation_vectors(theta_seq)
    return float(np.sum(phi * phi))


def mean_geodesic_change(theta_seq):
    """フレーム間の平均測地角変化（rad）"""
    phi = relative_rotation_vectors(theta_seq)
    if phi.size == 0:
        return 0.0
    return float(np.mean(np.linalg.norm(phi, axis=-1)))


def reproject(theta, beta, t, tree, cam):
    """X̂2D = K(T(X̂3D, t̂), f, c)"""
    return project(forward_kinematics(theta, beta, t, tree), cam).uv
