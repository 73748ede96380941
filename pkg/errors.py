"""
ツールチェーン共通の例外クラス
"""


class ToolchainError(Exception):
    """ツールチェーン内で発生するエラーの基底クラス"""


class ConfigError(ToolchainError, ValueError):
    pass


class TreeError(ToolchainError, ValueError):
    pass


class DimensionError(ToolchainError, ValueError):
    pass


class CameraError(ToolchainError, ValueError):
    pass


class SceneError(ToolchainError, ValueError):
    pass


class CatalogError(ToolchainError, ValueError):
    pass


class SequenceFormatError(ToolchainError, ValueError):
    pass


class FitError(ToolchainError):
    pass


class DegenerateAlignment(ToolchainError, ValueError):
    pass


class StoreError(ToolchainError):
    pass


class IllegalTransition(StoreError):
    def __init__(self, sequence_id, current, requested):
        self.sequence_id = sequence_id
        self.current = current
        self.requested = requested
        super().__init__(f"不正な状態遷移です: {sequence_id} {current} -> {requested}")


class QueueError(ToolchainError):
    pass


class LeaseError(QueueError):
    pass
