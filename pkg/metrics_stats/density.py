"""
データ密度の解析: 要因ごとのビン分け、カメラ角度・姿勢の広がり・遮蔽率の集計
"""
import glob
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from camera.model import camera_angles
from scene_occlusion.raycast import OcclusionLabel
from synth_engine.sequence import SEQUENCE_SUFFIX, load_sequence

logger = logging.getLogger(__name__)

FACTOR_COLUMNS = (
    "yaw_deg", "elevation_deg", "distance_m", "height_m",
    "pose_spread_m", "occluded_fraction", "self_occluded_fraction", "out_of_frame_fraction",
)


@dataclass(frozen=True, eq=False)
class BinReport:
    factor: str
    edges: np.ndarray
    counts: np.ndarray
    mean_error: np.ndarray  # 空のビンは nan

    @property
    def empty(self):
        return self.counts == 0

    def to_frame(self):
        return pd.DataFrame({
            "factor": self.factor,
            "bin_low": self.edges[:-1],
            "bin_high": self.edges[1:],
            "count": self.counts,
            "mean_error_mm": self.mean_error,
            "empty": self.empty,
        })


def bin_density_analysis(records, bins=10, factor="factor"):
    """
    records: (要因の値, 誤差 mm) の列、または factor と error_mm 列を持つ DataFrame。
    bins: ビン数またはビン境界。最後のビンは右端を含む。
    """
    if isinstance(records, pd.DataFrame):
        frame = pd.DataFrame({"value": records[factor].to_numpy(float), "error": records["error_mm"].to_numpy(float)})
    else:
        frame = pd.DataFrame(list(records), columns=["value", "error"], dtype=float)
    if frame.empty:
        raise ValueError("レコードが1件もありません")
    if not np.all(np.isfinite(frame["value"])):
        raise ValueError("要因の値に有限でないものがあります")

    edges = np.histogram_bin_edges(frame["value"], bins=bins) if np.ndim(bins) == 0 else np.asarray(bins, float)
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("ビン境界は昇順でなければなりません")
    n = len(edges) - 1
    idx = np.searchsorted(edges, frame["value"], side="right") - 1
    idx[frame["value"].to_numpy() == edges[-1]] = n - 1
    if np.any((idx < 0) | (idx >= n)):
        raise ValueError("ビン境界の範囲外の値があります")
    frame["bin"] = idx

    grouped = frame.groupby("bin")["error"].agg(["count", "mean"]).reindex(range(n))
    counts = grouped["count"].fillna(0).to_numpy(dtype=np.int64)
    return BinReport(factor=factor, edges=edges, counts=counts, mean_error=grouped["mean"].to_numpy(dtype=float))


def sequence_factors(seq):
    """1系列分の要因（カメラ角度、姿勢の広がり、遮蔽率）"""
    J = seq.occlusion.shape[1]
    X = np.asarray(seq.keypoints_3d, dtype=np.float64)[:, :J]
    root = X[:, 0].mean(axis=0)
    yaw, elevation, distance = camera_angles(seq.camera, root)
    relative = X - X[:, :1]
    labels = np.asarray(seq.occlusion)
    return {
        "sequence_id": seq.sequence_id,
        "frames": seq.frame_count,
        "yaw_deg": math.degrees(yaw),
        "elevation_deg": math.degrees(elevation),
        "distance_m": distance,
        "height_m": float(seq.camera.position[1] - root[1]),
        "pose_spread_m": float(np.mean(np.linalg.norm(relative.std(axis=0), axis=-1))),
        "occluded_fraction": float(np.mean(labels == OcclusionLabel.OCCLUDED)),
        "self_occluded_fraction": float(np.mean(labels == OcclusionLabel.SELF_OCCLUDED)),
        "out_of_frame_fraction": float(np.mean(~np.asarray(seq.in_frame, dtype=bool)[:, :J])),
    }


def camera_histogram_edges(bins, max_distance=10.0):
    return {
        "yaw_deg": np.linspace(0.0, 360.0, bins + 1),
        "elevation_deg": np.linspace(-90.0, 90.0, bins + 1),
        "distance_m": np.linspace(0.0, max_distance, bins + 1),
    }


@dataclass
class DatasetStats:
    sequences: pd.DataFrame
    histograms: Dict[str, BinReport] = field(default_factory=dict)

    @property
    def empty(self):
        return self.sequences.empty

    def summary(self):
        if self.empty:
            return pd.DataFrame(columns=["factor", "mean", "std", "min", "max"])
        cols = [c for c in FACTOR_COLUMNS if c in self.sequences]
        desc = self.sequences[cols].agg(["mean", "std", "min", "max"]).T
        return desc.rename_axis("factor").reset_index()


def dataset_stats(directory, bins=12):
    """ディレクトリ内の *.seq.json を集計する。空なら空の結果を返す"""
    paths = sorted(glob.glob(os.path.join(directory, f"*{SEQUENCE_SUFFIX}")))
    rows = [sequence_factors(load_sequence(p)) for p in paths]
    frame = pd.DataFrame(rows, columns=["sequence_id", "frames", *FACTOR_COLUMNS])
    if frame.empty:
        logger.info("系列が見つかりません: %s", directory)
        return DatasetStats(sequences=frame)

    max_distance = max(10.0, math.ceil(frame["distance_m"].max()))
    histograms = {}
    for name, edges in camera_histogram_edges(bins, max_distance).items():
        records = zip(np.clip(frame[name], edges[0], edges[-1]), np.zeros(len(frame)))
        histograms[name] = bin_density_analysis(records, edges, factor=name)
    logger.info("dataset_stats: %d sequences", len(frame))
    return DatasetStats(sequences=frame, histograms=histograms)


def write_stats(stats, out_dir):
    """CSV（系列ごと・要約・ヒストグラム）と SVG ヒストグラムを書き出す"""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "sequences": os.path.join(out_dir, "dataset_stats.csv"),
        "summary": os.path.join(out_dir, "dataset_summary.csv"),
        "histograms": os.path.join(out_dir, "camera_histograms.csv"),
    }
    stats.sequences.to_csv(paths["sequences"], index=False)
    stats.summary().to_csv(paths["summary"], index=False)
    hist_frames = [r.to_frame().drop(columns=["mean_error_mm", "empty"]) for r in stats.histograms.values()]
    hist = pd.concat(hist_frames, ignore_index=True) if hist_frames else pd.DataFrame(
        columns=["factor", "bin_low", "bin_high", "count"])
    hist.to_csv(paths["histograms"], index=False)
    if stats.histograms:
        paths["plot"] = os.path.join(out_dir, "camera_angles.svg")
        plot_histograms(stats.histograms, paths["plot"])
    return paths


def plot_histograms(histograms, path):
    plt.rcParams["svg.hashsalt"] = "gtah"
    fig, axes = plt.subplots(1, len(histograms), figsize=(4 * len(histograms), 3))
    for ax, (name, report) in zip(np.atleast_1d(axes), histograms.items()):
        ax.stairs(report.counts, report.edges, fill=True)
        ax.set_title(name)
        ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_bin_report(report, path):
    """密度（件数）と平均誤差の2段グラフ"""
    plt.rcParams["svg.hashsalt"] = "gtah"
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(5, 5))
    top.stairs(report.counts, report.edges, fill=True)
    top.set_ylabel("count")
    centers = 0.5 * (report.edges[:-1] + report.edges[1:])
    bottom.plot(centers[~report.empty], report.mean_error[~report.empty], marker="o")
    bottom.set_xlabel(report.factor)
    bottom.set_ylabel("mean error (mm)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
