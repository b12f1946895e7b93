"""onsetnet の例外定義

各例外は detail メッセージと終了コードを持つ。CLI の境界でまとめて終了コードに変換する。

終了コード:
    0 正常終了
    1 想定外のエラー
    2 設定エラー
    3 データエラー
    4 数値エラー (非有限値、勾配チェック失敗)
    5 入出力・チェックポイントエラー
    6 チェックポイントのバージョン不一致
"""


class OnsetNetError(Exception):
    """全エラーの基底クラス"""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(OnsetNetError):
    """設定値の不正"""

    exit_code = 2


class DataError(OnsetNetError):
    """アノテーション・フレーム・マニフェストの不正"""

    exit_code = 3


class ShapeError(OnsetNetError, ValueError):
    """テンソル形状や引数の不正"""

    exit_code = 2


class NumericError(OnsetNetError):
    """非有限の損失・勾配、勾配チェックの閾値超過"""

    exit_code = 4


class StorageError(OnsetNetError):
    """ファイルの読み書き失敗"""

    exit_code = 5


class CheckpointError(StorageError):
    """チェックポイントの読み込み失敗"""


class BadMagicError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    exit_code = 6
