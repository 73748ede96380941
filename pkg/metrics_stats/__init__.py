from flask import Blueprint

# Blueprintの初期化（CLI: stats / eval）
metrics_stats_bp = Blueprint('metrics_stats', __name__, cli_group=None)

from . import commands
