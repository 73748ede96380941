from flask import Blueprint

# Blueprintの初期化（CLI: scenario gen / synth）
synth_engine_bp = Blueprint(
    'synth_engine',  # Blueprintの名前
    __name__,  # 現在のモジュールの名前
    cli_group=None  # コマンドはルートに直接並べる
    )

# コマンドをインポート
from . import commands
