"""
SMPLアノテータ: 3Dキーポイント系列から (β, θ_t, t_t) を非線形最小二乗で推定する。

目的関数
    λ_data·Σ_t loss_3d² + λ_smooth·Σ_t Σ_j d_geo(R_{t-1,j}, R_{t,j})² + λ_shape_reg·‖β‖²
段階
    1) t_t をルートのキーポイントから、先頭フレームのルート回転を基準姿勢との位置合わせから初期化（他は θ=0, β=0）
    2) β を固定してフレーム毎に (θ_t, t_t) を解く
    3) β と全フレームを平滑化込みで同時に最適化
"""
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.spatial.transform import Rotation

from body_model.kinematics import (
    BETA_BOUND, PoseParams, batch_right_jacobian, batch_right_jacobian_inv, forward_kinematics, joint_regress,
    keypoint_jacobians,
)
from errors import DimensionError, FitError, SequenceFormatError
from .losses import relative_rotation_vectors
from .schemas import FitConfig

logger = logging.getLogger(__name__)

ANNOTATION_FORMAT = "gtah-annotation"
ANNOTATION_VERSION = 1
ANNOTATION_SUFFIX = ".fit.json"


@dataclass
class LMResult:
    x: np.ndarray
    objective: float
    history: List[float]
    iterations: int
    converged: bool


def levenberg_marquardt(residuals, x0, config, max_iterations, project=None):
    """
    減衰付きガウス・ニュートン法。residuals(x, True) は (r, J)、residuals(x, False) は r を返す。
    J は密行列でも scipy.sparse でもよい。目的関数が減少したステップのみ採用する。
    """
    x = project(x0) if project is not None else np.array(x0, dtype=np.float64)
    r, J = residuals(x, True)
    obj = float(r @ r)
    history = [obj]
    mu = config.damping_init
    n = len(x)
    iterations = 0
    converged = obj <= 1e-30

    while not converged and iterations < max_iterations:
        iterations += 1
        g = J.T @ r
        if np.max(np.abs(g)) < 1e-15:
            converged = True
            break
        is_sparse = sparse.issparse(J)
        A = (J.T @ J).tocsc() if is_sparse else J.T @ J

        accepted = False
        while mu <= config.damping_max:
            if is_sparse:
                delta = spsolve(A + mu * sparse.identity(n, format="csc"), -g)
            else:
                delta = np.linalg.solve(A + mu * np.eye(n), -g)
            x_new = x + delta
            if project is not None:
                x_new = project(x_new)
            r_new = residuals(x_new, False)
            obj_new = float(r_new @ r_new)
            if np.isfinite(obj_new) and obj_new < obj:
                accepted = True
                break
            mu *= config.damping_up

        if not accepted:
            # どの減衰でも減少しない: 停留点とみなす
            converged = True
            break

        decrease = obj - obj_new
        x, obj = x_new, obj_new
        history.append(obj)
        mu = max(mu / config.damping_down, 1e-15)
        if decrease < config.tolerance or obj <= 1e-30:
            converged = True
            break
        r, J = residuals(x, True)

    return LMResult(x=x, objective=obj, history=history, iterations=iterations, converged=converged)


def _block_coo(block, rows, cols):
    return (
        np.repeat(rows, len(cols)),
        np.tile(cols, len(rows)),
        block.ravel(),
    )


class SequenceProblem:
    """
    状態ベクトル x = [θ_0, t_0, θ_1, t_1, ..., θ_{T-1}, t_{T-1}, β] の残差とヤコビアン
    """

    def __init__(self, targets, masks, tree, config):
        targets = np.asarray(targets, dtype=np.float64)
        masks = np.asarray(masks, dtype=bool)
        J = tree.joint_count
        if targets.ndim != 3 or targets.shape[1:] != (J, 3):
            raise DimensionError(f"キーポイントの形状が不正です: {targets.shape}（関節数 {J}）")
        if masks.shape != targets.shape[:2]:
            raise DimensionError("マスクの形状がキーポイントと一致しません")
        if len(targets) < 1:
            raise FitError("フレームが1つもありません")
        if not np.all(np.isfinite(targets[masks])):
            raise FitError("有効な関節に非有限値が含まれています")
        too_few = np.flatnonzero(masks.sum(axis=1) < config.min_joints)
        if too_few.size:
            raise FitError(f"有効な関節が {config.min_joints} 未満のフレームがあります: {too_few.tolist()[:5]}")

        self.targets = targets
        self.masks = masks
        self.tree = tree
        self.config = config
        self.T = len(targets)
        self.J = J
        self.B = tree.shape_dim
        self.block = 3 * J + 3
        self.n = self.T * self.block + self.B
        self.w_data = np.sqrt(config.lambda_data)
        self.w_smooth = np.sqrt(config.lambda_smooth)
        self.w_shape = np.sqrt(config.lambda_shape_reg)

    @property
    def beta_cols(self):
        return np.arange(self.T * self.block, self.n)

    def pack(self, theta, transl, beta):
        return pack_state(theta, transl, beta, self.tree)

    def unpack(self, x):
        frames = x[: self.T * self.block].reshape(self.T, self.block)
        theta = frames[:, : 3 * self.J].reshape(self.T, self.J, 3)
        transl = frames[:, 3 * self.J:]
        beta = x[self.T * self.block:]
        return theta, transl, beta

    def clip_beta(self, x):
        x = np.array(x, dtype=np.float64)
        x[self.T * self.block:] = np.clip(x[self.T * self.block:], -BETA_BOUND, BETA_BOUND)
        return x

    def residuals(self, x, jac=True):
        theta, transl, beta = self.unpack(x)
        J, B, s = self.J, self.B, self.block
        parts = []
        rows, cols, vals = [], [], []
        row0 = 0
        eye_cols = np.arange(3 * J, s)

        # データ項
        for t in range(self.T):
            m = self.masks[t]
            nm = 3 * int(m.sum())
            if jac:
                P, d_theta, d_beta = keypoint_jacobians(theta[t], beta, transl[t], self.tree)
            else:
                P = forward_kinematics(theta[t], beta, transl[t], self.tree)
            parts.append(self.w_data * (P[m] - self.targets[t][m]).ravel())
            if jac:
                block = np.empty((nm, s + B))
                block[:, : 3 * J] = self.w_data * d_theta[m].reshape(nm, 3 * J)
                block[:, 3 * J: s] = self.w_data * np.tile(np.eye(3), (nm // 3, 1))
                block[:, s:] = self.w_data * d_beta[m].reshape(nm, B)
                frame_cols = np.concatenate([t * s + np.arange(3 * J), t * s + eye_cols, self.beta_cols])
                rr, cc, vv = _block_coo(block, row0 + np.arange(nm), frame_cols)
                rows.append(rr)
                cols.append(cc)
                vals.append(vv)
            row0 += nm

        # 回転の平滑化項
        if self.config.lambda_smooth > 0 and self.T > 1:
            phi = relative_rotation_vectors(theta).reshape(-1, 3)
            parts.append(self.w_smooth * phi.ravel())
            if jac:
                n = len(phi)
                d_curr = self.w_smooth * batch_right_jacobian_inv(phi) @ batch_right_jacobian(theta[1:])
                d_prev = -self.w_smooth * batch_right_jacobian_inv(-phi) @ batch_right_jacobian(theta[:-1])
                pair = np.arange(n)
                rr = np.broadcast_to((row0 + 3 * pair)[:, None, None] + np.arange(3)[None, :, None], (n, 3, 3))
                cc = np.broadcast_to(((pair // J + 1) * s + 3 * (pair % J))[:, None, None] + np.arange(3), (n, 3, 3))
                rows += [rr.ravel(), rr.ravel()]
                cols += [cc.ravel(), (cc - s).ravel()]
                vals += [d_curr.ravel(), d_prev.ravel()]
            row0 += phi.size

        # 形状の正則化項
        if self.config.lambda_shape_reg > 0:
            parts.append(self.w_shape * beta)
            if jac:
                rows.append(row0 + np.arange(B))
                cols.append(self.beta_cols)
                vals.append(np.full(B, self.w_shape))
            row0 += B

        r = np.concatenate(parts) if parts else np.zeros(0)
        if not jac:
            return r
        Jm = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(row0, self.n),
        ).tocsr()
        return r, Jm

    def objective(self, x):
        r = self.residuals(x, jac=False)
        return float(r @ r)

    def gradient(self, x):
        r, Jm = self.residuals(x, jac=True)
        return 2.0 * (Jm.T @ r)

    def frame_residuals(self, t, beta):
        """β を固定した1フレームの問題（x = [θ_t, t_t]）"""
        m = self.masks[t]
        target = self.targets[t][m]
        nm = 3 * int(m.sum())
        J, w = self.J, self.w_data
        tree = self.tree

        def residuals(x, jac=True):
            theta = x[: 3 * J].reshape(J, 3)
            transl = x[3 * J:]
            if not jac:
                return w * (forward_kinematics(theta, beta, transl, tree)[m] - target).ravel()
            P, d_theta, _ = keypoint_jacobians(theta, beta, transl, tree)
            Jm = np.empty((nm, 3 * J + 3))
            Jm[:, : 3 * J] = w * d_theta[m].reshape(nm, 3 * J)
            Jm[:, 3 * J:] = w * np.tile(np.eye(3), (nm // 3, 1))
            return w * (P[m] - target).ravel(), Jm

        return residuals


@dataclass
class FitResult:
    beta: np.ndarray
    theta: np.ndarray
    translation: np.ndarray
    residual_rms: np.ndarray
    iterations: int
    converged: bool
    wall_time_per_frame: float
    frame_iterations: int = 0
    joint_iterations: int = 0
    objective: float = 0.0
    objective_history: List[float] = field(default_factory=list)
    sequence_id: Optional[str] = None

    @property
    def frame_count(self):
        return len(self.theta)

    def keypoints(self, tree):
        return np.array([
            forward_kinematics(self.theta[t], self.beta, self.translation[t], tree)
            for t in range(self.frame_count)
        ])

    def to_dict(self, config=None, provenance=None):
        # 実行時間はファイルに含めない
        return {
            "format": ANNOTATION_FORMAT,
            "version": ANNOTATION_VERSION,
            "sequence_id": self.sequence_id,
            "joint_count": int(self.theta.shape[1]),
            "frames": self.frame_count,
            "beta": self.beta.tolist(),
            "theta": self.theta.tolist(),
            "translation": self.translation.tolist(),
            "residual_rms": self.residual_rms.tolist(),
            "iterations": self.iterations,
            "frame_iterations": self.frame_iterations,
            "joint_iterations": self.joint_iterations,
            "converged": self.converged,
            "objective": self.objective,
            "config": config.model_dump() if config is not None else None,
            "provenance": provenance or {},
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != ANNOTATION_FORMAT:
            raise SequenceFormatError(f"アノテーションファイルではありません: {data.get('format')}")
        return cls(
            beta=np.array(data["beta"], dtype=np.float64),
            theta=np.array(data["theta"], dtype=np.float64),
            translation=np.array(data["translation"], dtype=np.float64),
            residual_rms=np.array(data["residual_rms"], dtype=np.float64),
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
            wall_time_per_frame=float("nan"),
            frame_iterations=int(data.get("frame_iterations", 0)),
            joint_iterations=int(data.get("joint_iterations", 0)),
            objective=float(data.get("objective", 0.0)),
            sequence_id=data.get("sequence_id"),
        )


def save_annotation(result, path, config=None, provenance=None):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(result.to_dict(config, provenance), f)
        f.write("\n")


def load_annotation(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"アノテーションファイルが見つかりません: {path}")
    with open(path, encoding="utf-8") as f:
        return FitResult.from_dict(json.load(f))


def sequence_targets(seq, tree):
    """系列から元の J 関節のキーポイントとマスク（カメラ前方かつ有限）を取り出す"""
    X = np.asarray(seq.keypoints_3d, dtype=np.float64)
    J = tree.joint_count
    if X.ndim != 3 or X.shape[1] < J:
        raise DimensionError(f"キーポイント数 {X.shape[1] if X.ndim == 3 else '?'} が関節数 {J} より少ないです")
    targets = X[:, :J]
    masks = np.all(np.isfinite(targets), axis=-1)
    in_front = getattr(seq, "in_front", None)
    if in_front is not None:
        masks &= np.asarray(in_front, dtype=bool)[:, :J]
    return targets, masks


def _initial_translation(targets, masks, rest):
    transl = np.empty((len(targets), 3))
    for t in range(len(targets)):
        m = masks[t]
        if m[0]:
            transl[t] = targets[t, 0] - rest[0]
        else:
            transl[t] = targets[t][m].mean(axis=0) - rest[m].mean(axis=0)
    return transl


def _initial_root_rotation(target, mask, rest):
    """重心を合わせた基準姿勢の関節を観測に重ねる回転（軸角）"""
    observed = target[mask] - target[mask].mean(axis=0)
    reference = rest[mask] - rest[mask].mean(axis=0)
    rotation, _ = Rotation.align_vectors(observed, reference)
    return rotation.as_rotvec()


def _residual_rms(problem, theta, transl, beta):
    rms = np.empty(problem.T)
    for t in range(problem.T):
        m = problem.masks[t]
        P = forward_kinematics(theta[t], beta, transl[t], problem.tree)
        d = P[m] - problem.targets[t][m]
        rms[t] = np.sqrt(np.mean(np.sum(d * d, axis=1)))
    return rms


def fit_keypoints(targets, masks, tree, config=None, sequence_id=None):
    config = config or FitConfig()
    start = time.perf_counter()
    problem = SequenceProblem(targets, masks, tree, config)
    T, J = problem.T, problem.J

    # 1) 初期化
    beta = np.zeros(problem.B)
    theta = np.zeros((T, J, 3))
    rest = joint_regress(beta, tree)
    transl = _initial_translation(problem.targets, problem.masks, rest)
    theta[0, 0] = _initial_root_rotation(problem.targets[0], problem.masks[0], rest)

    # 2) フレーム毎（前フレームの姿勢から開始）
    frame_iterations = 0
    frames_converged = True
    if config.lambda_data > 0:
        for t in range(T):
            x0 = np.concatenate([theta[t - 1].ravel() if t > 0 else theta[t].ravel(), transl[t]])
            res = levenberg_marquardt(problem.frame_residuals(t, beta), x0, config, config.max_frame_iterations)
            theta[t] = res.x[: 3 * J].reshape(J, 3)
            transl[t] = res.x[3 * J:]
            frame_iterations += res.iterations
            frames_converged &= res.converged

    # 3) 系列全体
    x = problem.pack(theta, transl, beta)
    if config.schedule == "joint" and config.max_joint_iterations > 0:
        res = levenberg_marquardt(problem.residuals, x, config, config.max_joint_iterations, project=problem.clip_beta)
        x, history, joint_iterations, converged = res.x, res.history, res.iterations, res.converged
        objective = res.objective
    else:
        objective = problem.objective(x)
        history, joint_iterations, converged = [objective], 0, frames_converged
    theta, transl, beta = problem.unpack(x)

    theta = np.array([PoseParams(theta[t]).theta for t in range(T)])
    transl = np.array(transl)
    beta = np.array(beta)
    rms = _residual_rms(problem, theta, transl, beta)
    elapsed = time.perf_counter() - start

    logger.debug(
        "fit %s: T=%d frame_iters=%d joint_iters=%d objective=%.3e max_rms=%.2e m %.3f s/frame",
        sequence_id, T, frame_iterations, joint_iterations, objective, rms.max(), elapsed / T,
    )
    return FitResult(
        beta=beta,
        theta=theta,
        translation=transl,
        residual_rms=rms,
        iterations=frame_iterations + joint_iterations,
        converged=bool(converged),
        wall_time_per_frame=elapsed / T,
        frame_iterations=frame_iterations,
        joint_iterations=joint_iterations,
        objective=objective,
        objective_history=history,
        sequence_id=sequence_id,
    )


def fit_sequence(seq, tree, config=None):
    """SequenceData の3Dキーポイントに体モデルを当てはめる"""
    targets, masks = sequence_targets(seq, tree)
    sequence_id = getattr(getattr(seq, "spec", None), "sequence_id", None)
    return fit_keypoints(targets, masks, tree, config, sequence_id=sequence_id)


def _problem_for(seq, tree, config):
    if isinstance(seq, tuple):
        targets, masks = seq
    else:
        targets, masks = sequence_targets(seq, tree)
    return SequenceProblem(targets, masks, tree, config or FitConfig())


def objective_value(state, seq, tree, config=None):
    return _problem_for(seq, tree, config).objective(np.asarray(state, dtype=np.float64))


def objective_gradient(state, seq, tree, config=None):
    """目的関数全体の解析的勾配 2·Jᵀr（seq は SequenceData または (targets, masks)）"""
    return _problem_for(seq, tree, config).gradient(np.asarray(state, dtype=np.float64))


def pack_state(theta, translation, beta, tree):
    """(θ (T,J,3), t (T,3), β) を状態ベクトルにまとめる"""
    theta = np.asarray(theta, dtype=np.float64)
    T, J = len(theta), tree.joint_count
    frames = np.concatenate([theta.reshape(T, 3 * J), np.asarray(translation, dtype=np.float64).reshape(T, 3)], axis=1)
    return np.concatenate([frames.ravel(), np.asarray(beta, dtype=np.float64).ravel()])
