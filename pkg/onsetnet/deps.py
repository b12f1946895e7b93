"""コマンド間で共有する前処理 (設定の上書き、データセット読み込み、実行マニフェスト)"""
import hashlib
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Mapping, Optional

from onsetnet import __version__
from onsetnet.core.config import flatten_config, parse_assignments
from onsetnet.data.annotations import OnsetDataset, load_annotations
from onsetnet.errors import ConfigError, StorageError
from onsetnet.schemas import RunConfig, RunManifest

logger = logging.getLogger(__name__)

RUN_MANIFEST_NAME = "run_manifest.json"


def config_overrides(args) -> Dict[str, object]:
    """--set とグローバル・コマンド固有のフラグを設定キーの辞書にまとめる (明示フラグが優先)"""
    overrides: Dict[str, object] = dict(parse_assignments(getattr(args, "set", None)))
    flags = {"seed": args.seed, "paths.data": args.data, "paths.out": args.out}
    command_flags = getattr(args, "overrides", None)
    if command_flags is not None:
        flags.update(command_flags(args))
    overrides.update({key: value for key, value in flags.items() if value is not None})
    return overrides


def require_data(config: RunConfig) -> Path:
    if not config.paths.data:
        raise ConfigError("no dataset manifest given (use --data or paths.data)")
    path = Path(config.paths.data)
    if not path.is_file():
        raise ConfigError(f"dataset manifest not found: {path}")
    return path


def load_dataset(config: RunConfig) -> OnsetDataset:
    return load_annotations(require_data(config), config.model.roi_names)


def require_subject(dataset: OnsetDataset, subject: str) -> str:
    if subject not in dataset.subjects:
        raise ConfigError(f"unknown subject {subject!r}; available: {dataset.subjects}")
    return subject


def output_dir(config: RunConfig, *parts: str) -> Path:
    path = Path(config.paths.out, *parts)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create output directory {path}: {exc}") from exc
    return path


def file_digest(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_run_manifest(
    out_dir: Path,
    command: str,
    config: RunConfig,
    inputs: Optional[Mapping[str, Path]] = None,
) -> Path:
    """実行前に設定のスナップショットと入力ファイルのダイジェストを書き出す"""
    path = Path(out_dir) / RUN_MANIFEST_NAME
    try:
        digests = {name: file_digest(p) for name, p in (inputs or {}).items()}
        manifest = RunManifest(
            command=command,
            tool_version=__version__,
            seed=config.seed,
            config=flatten_config(config),
            inputs=digests,
            created_at=datetime.now(timezone.utc),
        )
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.json(indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write run manifest {path}: {exc}") from exc
    logger.debug("wrote run manifest %s", path)
    return path
