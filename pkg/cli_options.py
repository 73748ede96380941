"""
各コマンド共通のオプション（ツールのパッケージに依存しない）
"""
import click

CONFIG_ENV = "GTAH_CONFIG"

# 各コマンド共通の --config オプション
config_option = click.option(
    "--config", "config_path", type=click.Path(dir_okay=False), default=None,
    help=f"設定ファイル（JSON）。未指定なら環境変数 {CONFIG_ENV}",
)
