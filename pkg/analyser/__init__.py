from flask import Blueprint

# Blueprintの初期化（CLI: analyse）
analyser_bp = Blueprint('analyser', __name__, cli_group=None)

from . import commands
