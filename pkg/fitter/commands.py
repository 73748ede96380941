import click
from flask import current_app

import config
from cli_options import config_option
from synth_engine.sequence import SEQUENCE_SUFFIX, load_sequence
from . import fitter_bp  # Blueprintをインポート
from .solver import ANNOTATION_SUFFIX, fit_sequence, save_annotation


def default_output(path):
    if path.endswith(SEQUENCE_SUFFIX):
        return path[: -len(SEQUENCE_SUFFIX)] + ANNOTATION_SUFFIX
    return path + ANNOTATION_SUFFIX


@fitter_bp.cli.command('fit')
@click.option('--input', 'input_path', required=True, type=click.Path(dir_okay=False), help='系列ファイル（.seq.json）')
@click.option('--out', type=click.Path(dir_okay=False), default=None, help='出力（既定は入力と同じ場所の .fit.json）')
@click.option('--schedule', type=click.Choice(['joint', 'per_frame']), default=None, help='最適化の段階')
@click.option('--lambda-smooth', type=click.FloatRange(min=0), default=None, help='回転平滑化の重み')
@click.option('--lambda-shape-reg', type=click.FloatRange(min=0), default=None, help='β の正則化の重み')
@config_option
def fit(input_path, out, schedule, lambda_smooth, lambda_shape_reg, config_path):
    """系列の3Dキーポイントに体モデルを当てはめる"""
    cfg = config.resolve(config_path, {'fit': {
        'schedule': schedule, 'lambda_smooth': lambda_smooth, 'lambda_shape_reg': lambda_shape_reg,
    }})
    tree = config.resolve_tree(cfg)
    seq = load_sequence(input_path)

    result = fit_sequence(seq, tree, cfg.fit)
    out = out or default_output(input_path)
    save_annotation(result, out, cfg.fit, config.provenance(cfg, seed=seq.spec.seed, sequence_id=seq.sequence_id))
    current_app.logger.info("%s: %.3f s/frame", seq.sequence_id, result.wall_time_per_frame)
    click.echo(
        f"{seq.sequence_id}: frames={result.frame_count} iterations={result.iterations} "
        f"converged={result.converged} max_rms={result.residual_rms.max() * 1000:.3f} mm -> {out}"
    )
