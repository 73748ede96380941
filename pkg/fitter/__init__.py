from flask import Blueprint

# Blueprintの初期化（CLI: fit）
fitter_bp = Blueprint('fitter', __name__, cli_group=None)

from . import commands
