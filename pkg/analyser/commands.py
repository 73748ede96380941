import json

import click

import config
from cli_options import config_option
from synth_engine.sequence import load_sequence
from . import analyser_bp  # Blueprintをインポート
from .quality import quality_gate


@analyser_bp.cli.command('analyse')
@click.option('--input', 'input_paths', required=True, multiple=True, type=click.Path(dir_okay=False),
              help='系列ファイル（複数指定可）')
@click.option('--min-speed', type=click.FloatRange(min=0), default=None, help='平均関節速度の下限（m/frame）')
@click.option('--max-occluded', type=click.FloatRange(0, 1), default=None, help='遮蔽された関節の割合の上限')
@click.option('--max-out-of-frame', type=click.FloatRange(0, 1), default=None, help='画面外の関節の割合の上限')
@config_option
def analyse(input_paths, min_speed, max_occluded, max_out_of_frame, config_path):
    """系列の品質を判定し、1系列1行の JSON で結果を出力する"""
    cfg = config.resolve(config_path, {'thresholds': {
        'min_speed': min_speed, 'max_occluded': max_occluded, 'max_out_of_frame': max_out_of_frame,
    }})
    for path in input_paths:
        seq = load_sequence(path)
        report = quality_gate(seq, cfg.thresholds)
        click.echo(json.dumps({'sequence_id': seq.sequence_id, **report.to_dict()}))
