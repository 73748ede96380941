from flask import Blueprint

# Blueprintの初期化（CLI: pipeline run / status / replay）
pipeline_bp = Blueprint(
    'pipeline',  # Blueprintの名前
    __name__,  # 現在のモジュールの名前
    cli_group='pipeline'
    )

# コマンドをインポート
from . import commands
