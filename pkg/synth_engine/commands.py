import os

import click
from flask import current_app
from tqdm import tqdm

import config
from cli_options import config_option
from . import synth_engine_bp  # Blueprintをインポート
from .scenario import generate_scenario, read_specs, scenario_seeds, write_specs
from .sequence import SEQUENCE_SUFFIX, add_noise, save_sequence, synthesize_sequence


@synth_engine_bp.cli.group('scenario')
def scenario():
    """シナリオファイルの操作"""


@scenario.command('gen')
@click.option('--count', '-n', type=click.IntRange(min=1), default=1, show_default=True, help='生成するシナリオ数')
@click.option('--seed', type=click.IntRange(min=0), default=None, help='マスターシード（設定の seed を上書き）')
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='出力先（1行1シナリオの .specs.jsonl）')
@config_option
def scenario_gen(count, seed, out, config_path):
    """マスターシードからシナリオを生成する"""
    cfg = config.resolve(config_path, {'seed': seed})
    tree = config.resolve_tree(cfg)
    catalogs = config.resolve_catalogs(cfg, tree)
    ref = config.camera_distribution_ref(cfg)
    specs = [
        generate_scenario(s, catalogs, ref, sequence_id=sid, location_extent=cfg.pipeline.location_extent)
        for sid, s in scenario_seeds(cfg.seed, count)
    ]
    write_specs(specs, out)
    current_app.logger.info("シナリオ %d 件を書き出しました: %s", len(specs), out)
    click.echo(out)


@synth_engine_bp.cli.command('synth')
@click.option('--specs', 'specs_path', required=True, type=click.Path(dir_okay=False), help='シナリオファイル')
@click.option('--out', required=True, type=click.Path(file_okay=False), help='系列の出力ディレクトリ')
@click.option('--noise', type=click.FloatRange(min=0), default=None, help='3Dキーポイントのノイズ σ（m）')
@config_option
def synth(specs_path, out, noise, config_path):
    """シナリオから正解付きの系列を合成する"""
    cfg = config.resolve(config_path, {'pipeline': {'noise_sigma': noise}})
    tree = config.resolve_tree(cfg)
    scene = config.resolve_scene(cfg)
    catalogs = config.resolve_catalogs(cfg, tree)
    specs = read_specs(specs_path)

    os.makedirs(out, exist_ok=True)
    for spec in tqdm(specs, desc='synth', unit='seq', disable=len(specs) < 2):
        dist = config.resolve_camera_distribution(spec.camera_distribution)
        seq = synthesize_sequence(spec, tree, scene, catalogs, dist, cfg.intrinsics, cfg.body_radii,
                                  provenance=config.provenance(cfg))
        if cfg.pipeline.noise_sigma > 0:
            seq = add_noise(seq, cfg.pipeline.noise_sigma, spec.seed)
        path = os.path.join(out, spec.sequence_id + SEQUENCE_SUFFIX)
        save_sequence(seq, path)
        current_app.logger.debug("合成しました: %s (%d フレーム)", path, seq.frame_count)
    click.echo(f"{len(specs)} sequences -> {out}")
