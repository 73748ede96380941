import logging
import sys

import click
from flask import Flask
from flask.cli import ScriptInfo

import config
from analyser import analyser_bp
from body_model import body_model_bp
from errors import ToolchainError
from fitter import fitter_bp
from metrics_stats import metrics_stats_bp
from pipeline import pipeline_bp
from synth_engine import synth_engine_bp

PROG_NAME = 'gtah'


def create_app(toolchain_config=None):
    """アプリケーションを作り、各ツールの Blueprint を登録する"""
    app = Flask(__name__)
    cfg = toolchain_config or config.load_config()  # 環境変数 GTAH_CONFIG があれば読み込む
    app.config[config.CONFIG_KEY] = cfg

    logging.basicConfig(format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    logging.getLogger().setLevel(cfg.log_level.upper())
    app.logger.setLevel(cfg.log_level.upper())

    # Blueprintをアプリケーションに登録
    app.register_blueprint(body_model_bp)
    app.register_blueprint(synth_engine_bp)
    app.register_blueprint(analyser_bp)
    app.register_blueprint(fitter_bp)
    app.register_blueprint(pipeline_bp)
    app.register_blueprint(metrics_stats_bp)
    return app


def main(argv=None, app=None):
    """終了コード: 0 成功、1 使い方の誤り、2 実行時の失敗"""
    try:
        app = app or create_app()
    except ToolchainError as e:
        click.echo(f"エラー: {e}", err=True)
        return 2
    app.cli.name = PROG_NAME
    try:
        rv = app.cli.main(
            args=argv, prog_name=PROG_NAME, standalone_mode=False,
            obj=ScriptInfo(create_app=lambda: app),
        )
    except click.UsageError as e:
        e.show()
        return 1
    except click.ClickException as e:
        e.show()
        return 2
    except click.Abort:
        click.echo("中断しました", err=True)
        return 1
    except (ToolchainError, OSError) as e:
        click.echo(f"エラー: {e}", err=True)
        return 2
    return rv if isinstance(rv, int) else 0


if __name__ == '__main__':
    sys.exit(main())
