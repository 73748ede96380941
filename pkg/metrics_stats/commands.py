import glob
import os

import click
import numpy as np
import pandas as pd
from flask import current_app

import config
from cli_options import config_option
from body_model.kinematics import forward_kinematics
from camera.model import project
from fitter.losses import reproject
from fitter.solver import ANNOTATION_FORMAT, ANNOTATION_SUFFIX, load_annotation
from synth_engine.sequence import SEQUENCE_SUFFIX, load_sequence
from . import metrics_stats_bp  # Blueprintをインポート
from .density import bin_density_analysis, dataset_stats, plot_bin_report, sequence_factors, write_stats
from .metrics import mpjpe, pa_mpjpe


class Keypoints:
    """評価対象: 元の J 関節の3D位置と、取れる場合はカメラと2D観測"""

    def __init__(self, sequence_id, points, seq=None, annotation=None):
        self.sequence_id = sequence_id
        self.points = points
        self.seq = seq
        self.annotation = annotation


def _read_format(path):
    with open(path, encoding='utf-8') as f:
        head = f.read(256)
    return ANNOTATION_FORMAT if f'"{ANNOTATION_FORMAT}"' in head else None


def load_keypoints(path, tree, source='keypoints'):
    """
    .fit.json ならその (β, θ, t) から、.seq.json なら保存されたキーポイントから読む。
    source='params' の系列ファイルは正解パラメータから順運動学で求める。
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"ファイルが見つかりません: {path}")
    J = tree.joint_count
    if path.endswith(ANNOTATION_SUFFIX) or _read_format(path) == ANNOTATION_FORMAT:
        result = load_annotation(path)
        return Keypoints(result.sequence_id, result.keypoints(tree), annotation=result)
    seq = load_sequence(path)
    if source == 'params':
        if seq.ground_truth is None:
            raise click.UsageError(f"正解パラメータがありません: {path}")
        gt = seq.ground_truth
        points = np.array([forward_kinematics(gt.theta[t], gt.beta, gt.translation[t], tree)
                           for t in range(seq.frame_count)])
    else:
        points = np.asarray(seq.keypoints_3d)[:, :J]
    return Keypoints(seq.sequence_id, points, seq=seq)


def _reprojection_error(pred, gt, tree):
    """gt の2D観測（カメラ前方の関節）に対する pred の再投影誤差の平均（px）"""
    if gt.seq is None:
        return np.nan
    J = tree.joint_count
    cam = gt.seq.camera
    if pred.annotation is not None:
        a = pred.annotation
        uv = np.array([reproject(a.theta[t], a.beta, a.translation[t], tree, cam) for t in range(len(a.theta))])
    else:
        uv = project(pred.points, cam).uv
    target = np.asarray(gt.seq.keypoints_2d)[:, :J]
    mask = np.asarray(gt.seq.in_front)[:, :J] & np.all(np.isfinite(uv), axis=-1)
    if not mask.any():
        return np.nan
    return float(np.mean(np.linalg.norm(uv[mask] - target[mask], axis=-1)))


def evaluate_pair(pred, gt, tree, scale=True):
    if pred.points.shape != gt.points.shape:
        raise click.UsageError(f"フレーム数・関節数が一致しません: {pred.sequence_id} / {gt.sequence_id}")
    row = {
        'sequence_id': gt.sequence_id,
        'frames': len(gt.points),
        'mpjpe_mm': mpjpe(pred.points, gt.points),
        'pa_mpjpe_mm': pa_mpjpe(pred.points, gt.points, scale=scale),
        'reproj_px': _reprojection_error(pred, gt, tree),
    }
    if gt.seq is not None:
        factors = sequence_factors(gt.seq)
        factors.pop('sequence_id')
        factors.pop('frames')
        row.update(factors)
    return row


def _pairs(pred_path, gt_path):
    """ファイル同士、またはディレクトリ同士（系列IDで対応付け）の組"""
    if not os.path.isdir(pred_path) and not os.path.isdir(gt_path):
        return [(pred_path, gt_path)]
    if not (os.path.isdir(pred_path) and os.path.isdir(gt_path)):
        raise click.UsageError("--pred と --gt はどちらもファイルか、どちらもディレクトリにしてください")

    def index(directory):
        found = {}
        for suffix in (SEQUENCE_SUFFIX, ANNOTATION_SUFFIX):
            for p in sorted(glob.glob(os.path.join(directory, '*' + suffix))):
                found.setdefault(os.path.basename(p)[: -len(suffix)], p)
        return found

    preds, gts = index(pred_path), index(gt_path)
    common = sorted(set(preds) & set(gts))
    if not common:
        raise click.UsageError("対応する系列がありません")
    return [(preds[k], gts[k]) for k in common]


@metrics_stats_bp.cli.command('eval')
@click.option('--pred', 'pred_path', required=True, type=click.Path(), help='予測（.fit.json / .seq.json / ディレクトリ）')
@click.option('--gt', 'gt_path', required=True, type=click.Path(), help='正解（.seq.json / .fit.json / ディレクトリ）')
@click.option('--gt-source', type=click.Choice(['keypoints', 'params']), default='keypoints', show_default=True,
              help='系列ファイルの正解として使うもの（保存キーポイントか正解パラメータか）')
@click.option('--no-scale', is_flag=True, help='PA-MPJPE の位置合わせでスケールを使わない')
@click.option('--out', type=click.Path(dir_okay=False), default=None, help='系列ごとの結果（CSV）')
@config_option
def evaluate(pred_path, gt_path, gt_source, no_scale, out, config_path):
    """MPJPE / PA-MPJPE（mm）と2D再投影誤差（px）を計算する"""
    cfg = config.resolve(config_path)
    tree = config.resolve_tree(cfg)
    rows = []
    for p, g in _pairs(pred_path, gt_path):
        pred = load_keypoints(p, tree)
        gt = load_keypoints(g, tree, gt_source)
        rows.append(evaluate_pair(pred, gt, tree, scale=not no_scale))
    table = pd.DataFrame(rows)
    if out:
        table.to_csv(out, index=False)
        current_app.logger.info("評価結果を書き出しました: %s", out)
    click.echo(f"sequences: {len(table)}")
    click.echo(f"MPJPE: {table['mpjpe_mm'].mean():.3f} mm")
    click.echo(f"PA-MPJPE: {table['pa_mpjpe_mm'].mean():.3f} mm")
    if table['reproj_px'].notna().any():
        click.echo(f"2D reprojection: {table['reproj_px'].mean():.3f} px")


@metrics_stats_bp.cli.command('stats')
@click.option('--data', 'data_dir', type=click.Path(file_okay=False), default=None, help='系列ディレクトリ')
@click.option('--errors', 'errors_path', type=click.Path(dir_okay=False), default=None,
              help='eval --out の CSV（要因ごとの誤差の集計に使う）')
@click.option('--factor', default='yaw_deg', show_default=True, help='ビン分けする要因の列名')
@click.option('--error-column', default='pa_mpjpe_mm', show_default=True, help='誤差の列名')
@click.option('--bins', type=click.IntRange(min=1), default=12, show_default=True, help='ビン数')
@click.option('--out', type=click.Path(file_okay=False), default=None, help='CSV と SVG の出力ディレクトリ')
@config_option
def stats(data_dir, errors_path, factor, error_column, bins, out, config_path):
    """データセットの分布（カメラ角度・姿勢の広がり・遮蔽率）または要因ごとの誤差を集計する"""
    cfg = config.resolve(config_path)
    if (data_dir is None) == (errors_path is None):
        raise click.UsageError("--data か --errors のどちらか一方を指定してください")
    out = out or cfg.paths.output_dir

    if errors_path is not None:
        if not os.path.exists(errors_path):
            raise FileNotFoundError(f"ファイルが見つかりません: {errors_path}")
        table = pd.read_csv(errors_path)
        for column in (factor, error_column):
            if column not in table:
                raise click.UsageError(f"列がありません: {column}")
        records = table[[factor, error_column]].rename(columns={error_column: 'error_mm'})
        report = bin_density_analysis(records, bins, factor=factor)
        frame = report.to_frame()
        os.makedirs(out, exist_ok=True)
        frame.to_csv(os.path.join(out, f"density_{factor}.csv"), index=False)
        plot_bin_report(report, os.path.join(out, f"density_{factor}.svg"))
        click.echo(frame.to_string(index=False))
        return

    result = dataset_stats(data_dir, bins=bins)
    paths = write_stats(result, out)
    if result.empty:
        click.echo("sequences: 0")
        return
    click.echo(f"sequences: {len(result.sequences)}")
    click.echo(result.summary().to_string(index=False))
    current_app.logger.info("統計を書き出しました: %s", ", ".join(paths.values()))
