import os
from functools import lru_cache
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, BaseSettings, ValidationError, validator
from pydantic.fields import SHAPE_SINGLETON, ModelField

from onsetnet.errors import ConfigError
from onsetnet.schemas import RunConfig, RunManifest

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

NONE_VALUES = ("", "none", "null")


class Environment(BaseSettings):
    """ 環境変数を読み込む
    """
    threads: int = 1
    log_level: str = "INFO"

    class Config:
        env_prefix = "ONSETNET_"
        env_file = os.path.join(PROJECT_ROOT, '.env')

    @validator("threads")
    def check_threads(cls, v):
        if v < 1:
            raise ValueError(f"ONSETNET_THREADS must be >= 1, got {v}")
        return v


@lru_cache
def get_env():
    """ @lru_cacheで環境変数の結果をキャッシュする
    """
    try:
        return Environment()
    except ValidationError as exc:
        raise ConfigError(f"invalid environment: {exc}") from exc


def _section_fields() -> Dict[str, Tuple[Optional[str], ModelField]]:
    """フラットなキー -> (セクション名, フィールド) の対応表"""
    table = {}
    for name, field in RunConfig.__fields__.items():
        if isinstance(field.type_, type) and issubclass(field.type_, BaseModel):
            for sub_name, sub_field in field.type_.__fields__.items():
                table[f"{name}.{sub_name}"] = (name, sub_field)
        else:
            table[name] = (None, field)
    return table


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def flatten_config(config: RunConfig) -> Dict[str, str]:
    """設定をフラットな key=value の辞書にする"""
    flat = {}
    for key, (section, field) in _section_fields().items():
        owner = getattr(config, section) if section else config
        flat[key] = _format_value(getattr(owner, field.name))
    return flat


def _coerce(field: ModelField, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if field.allow_none and text.lower() in NONE_VALUES:
        return None
    if field.shape != SHAPE_SINGLETON:
        return [item.strip() for item in text.split(",") if item.strip()]
    return text


def read_config_file(path) -> Dict[str, str]:
    """key=value 形式の設定ファイル、または run_manifest.json を読み込む"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        try:
            manifest = RunManifest.parse_file(path)
        except (ValidationError, ValueError) as exc:
            raise ConfigError(f"invalid run manifest {path}: {exc}") from exc
        return dict(manifest.config)
    return {key: value for key, value in dotenv_values(path).items() if value is not None}


def load_run_config(config_path=None, overrides: Optional[Mapping[str, object]] = None) -> RunConfig:
    """デフォルト < 設定ファイル < コマンドライン の順で設定を重ねる"""
    values: Dict[str, object] = {}
    if config_path is not None:
        values.update(read_config_file(config_path))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value

    table = _section_fields()
    nested: Dict[str, object] = {}
    for key, raw in values.items():
        if key not in table:
            raise ConfigError(f"unknown config key: {key}")
        section, field = table[key]
        if section is None:
            nested[field.name] = _coerce(field, raw)
        else:
            nested.setdefault(section, {})[field.name] = _coerce(field, raw)

    try:
        config = RunConfig.parse_obj(nested)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc

    # 時間方向のスケジュールはモデル構築時と同じ規則で確認する
    extents = config.model.temporal_extents()
    if extents[-1] != 1 or min(extents) < 1:
        raise ConfigError(
            f"temporal kernels {config.model.temporal_kernels} give per-layer extents {extents}; CONV5 must end at 1"
        )
    return config


def parse_assignments(items) -> Dict[str, str]:
    """--set key=value の並びを辞書にする"""
    parsed = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"expected key=value, got {item!r}")
        parsed[key.strip()] = value
    return parsed