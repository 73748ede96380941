from flask import Blueprint

# Blueprintの初期化（CLI: tree export / tree show）
body_model_bp = Blueprint(
    'body_model',  # Blueprintの名前
    __name__,  # 現在のモジュールの名前
    cli_group='tree'
    )

# コマンドをインポート
from . import commands
