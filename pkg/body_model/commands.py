import click
import numpy as np
import pandas as pd
from flask import current_app

import config
from cli_options import config_option
from . import body_model_bp  # Blueprintをインポート
from .kinematics import joint_regress, save_tree


@body_model_bp.cli.command('export')
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='出力するツリーファイル（JSON）')
@config_option
def export_tree(out, config_path):
    """使用中の運動学ツリーをファイルに書き出す"""
    cfg = config.resolve(config_path)
    tree = config.resolve_tree(cfg)
    save_tree(tree, out)
    current_app.logger.info("ツリーを書き出しました: %s (%d 関節)", out, tree.joint_count)
    click.echo(out)


@body_model_bp.cli.command('show')
@config_option
def show_tree(config_path):
    """関節の一覧（親、オフセット、基準姿勢の位置）を表示する"""
    cfg = config.resolve(config_path)
    tree = config.resolve_tree(cfg)
    rest = joint_regress(np.zeros(tree.shape_dim), tree)
    table = pd.DataFrame({
        'name': tree.names,
        'parent': [tree.names[p] if p >= 0 else '-' for p in tree.parents],
        'bone_length_m': np.linalg.norm(tree.rest_offsets, axis=1).round(4),
        'rest_x': rest[:, 0].round(4),
        'rest_y': rest[:, 1].round(4),
        'rest_z': rest[:, 2].round(4),
    })
    table.loc[0, 'bone_length_m'] = np.nan
    click.echo(table.to_string())
