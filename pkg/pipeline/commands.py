import os

import click
import pandas as pd
from flask import current_app

import config
from cli_options import config_option
from errors import ToolchainError
from . import pipeline_bp  # Blueprintをインポート
from .runner import DATABASE_NAME, TRANSITIONS_NAME, run_pipeline
from .store import JobStore, load_transitions, replay_transitions


def _open_store(out):
    path = os.path.join(out, DATABASE_NAME)
    if not os.path.exists(path):
        raise FileNotFoundError(f"ジョブデータベースが見つかりません: {path}")
    return JobStore(path, config.get_config().pipeline.max_attempts)


@pipeline_bp.cli.command('run')
@click.option('--sequences', type=click.IntRange(min=0), default=None, help='生成する系列数')
@click.option('--gen-workers', type=click.IntRange(min=1), default=None, help='生成ワーカー数')
@click.option('--fit-workers', type=click.IntRange(min=1), default=None, help='アノテーションワーカー数')
@click.option('--seed', type=click.IntRange(min=0), default=None, help='マスターシード')
@click.option('--out', type=click.Path(file_okay=False), default=None, help='出力ディレクトリ')
@click.option('--nack-rate', type=click.FloatRange(0, 1, max_open=True), default=None, help='故障注入: わざと nack する割合')
@click.option('--noise', type=click.FloatRange(min=0), default=None, help='3Dキーポイントのノイズ σ（m）')
@click.option('--progress/--no-progress', default=True, help='進捗バーを表示する')
@config_option
@click.pass_context
def run(ctx, sequences, gen_workers, fit_workers, seed, out, nack_rate, noise, progress, config_path):
    """生成 → 判定 → アノテーションのパイプラインを全ジョブが終端状態になるまで実行する"""
    cfg = config.resolve(config_path, {
        'seed': seed,
        'paths': {'output_dir': out},
        'pipeline': {'sequences': sequences, 'gen_workers': gen_workers, 'fit_workers': fit_workers,
                     'nack_rate': nack_rate, 'noise_sigma': noise},
    })
    resources = config.build_resources(cfg)
    summary = run_pipeline(resources, cfg.pipeline, cfg.paths.output_dir, cfg.seed, progress=progress)

    for status, n in summary.counts.items():
        click.echo(f"{status:<18}{n}")
    current_app.logger.info("pipeline: %d jobs, all terminal=%s", summary.total, summary.all_terminal)
    if not summary.all_terminal:
        click.echo("終端状態でないジョブが残っています", err=True)
        ctx.exit(2)


@pipeline_bp.cli.command('status')
@click.option('--out', type=click.Path(file_okay=False), default=None, help='パイプラインの出力ディレクトリ')
@click.option('--jobs', 'show_jobs', is_flag=True, help='ジョブごとの状態も表示する')
@config_option
def status(out, show_jobs, config_path):
    """状態ごとのジョブ数を表示する"""
    cfg = config.resolve(config_path, {'paths': {'output_dir': out}})
    store = _open_store(cfg.paths.output_dir)
    try:
        for name, n in store.counts().items():
            click.echo(f"{name:<18}{n}")
        if show_jobs:
            table = pd.DataFrame([
                {'sequence_id': j.sequence_id, 'status': j.status.value, 'attempts': j.attempts,
                 'terminal': store.is_terminal(j), 'last_error': j.last_error}
                for j in store.jobs()
            ])
            click.echo(table.to_string(index=False))
    finally:
        store.close()


@pipeline_bp.cli.command('replay')
@click.option('--out', type=click.Path(file_okay=False), default=None, help='パイプラインの出力ディレクトリ')
@config_option
def replay(out, config_path):
    """遷移ログを PENDING から再生し、すべての遷移が許可されたものか確かめる"""
    cfg = config.resolve(config_path, {'paths': {'output_dir': out}})
    out = cfg.paths.output_dir
    log_path = os.path.join(out, TRANSITIONS_NAME)
    store = _open_store(out)
    try:
        transitions = load_transitions(log_path) if os.path.exists(log_path) else store.transitions()
        snapshot = {j.sequence_id: j.status for j in store.jobs()}
    finally:
        store.close()
    try:
        final = replay_transitions(transitions, snapshot)
    except ToolchainError as e:
        current_app.logger.error("遷移ログの検証に失敗しました: %s", e)
        raise
    click.echo(f"OK: {len(transitions)} transitions, {len(final)} jobs")
