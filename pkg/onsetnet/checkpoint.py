"""チェックポイントの保存と読み込み

形式 (リトルエンディアン):
    magic "C4SN" | u32 version
    u32 長さ + 正規化 JSON テキスト (モデル設定とメタデータ)
    u32 エントリ数
    エントリごと: u32 長さ + UTF-8 名前 | u32 rank | u32 extents... | u32 dtype | 生データ
    u32 CRC-32 (先行する全バイト)
"""
import json
import logging
import os
import struct
import zlib
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
from pydantic import ValidationError

from onsetnet.errors import (
    BadMagicError,
    CheckpointShapeError,
    CorruptCheckpointError,
    OnsetNetError,
    StorageError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from onsetnet.network import Model, build_model, state_tensors
from onsetnet.schemas import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"C4SN"
VERSION = 1
# magic + version + CRC
MIN_SIZE = 12
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CODE_OF = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def _u32(value: int) -> bytes:
    return struct.pack("<I", value)


def _text(value: str) -> bytes:
    raw = value.encode("utf-8")
    return _u32(len(raw)) + raw


def encode_checkpoint(model: Model, metadata: Dict) -> bytes:
    header = json.dumps({"config": model.config.dict(), "metadata": metadata}, sort_keys=True, separators=(",", ":"))
    entries = state_tensors(model)
    parts = [MAGIC, _u32(VERSION), _text(header), _u32(len(entries))]
    for name, tensor in entries:
        parts.append(_text(name))
        parts.append(_u32(tensor.ndim))
        parts.extend(_u32(extent) for extent in tensor.shape)
        parts.append(_u32(CODE_OF[tensor.dtype]))
        parts.append(np.ascontiguousarray(tensor).astype(DTYPE_CODES[CODE_OF[tensor.dtype]], copy=False).tobytes())
    body = b"".join(parts)
    return body + _u32(zlib.crc32(body))


def save_checkpoint(model: Model, path, metadata: Dict) -> Path:
    """チェックポイントを書き出す (一時ファイル経由で置き換える)"""
    path = Path(path)
    payload = encode_checkpoint(model, metadata)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.debug("saved checkpoint %s (%d bytes)", path, len(payload))
    return path


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.offset = 0
        self.path = path

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def take(self, size: int) -> bytes:
        if size > self.remaining:
            raise TruncatedCheckpointError(f"checkpoint {self.path} is truncated at byte {len(self.data)}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptCheckpointError(f"checkpoint {self.path} has malformed UTF-8 text before byte {self.offset}") from exc


def _crc_matches(data: bytes) -> bool:
    return struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])


def decode_checkpoint(data: bytes, path="<bytes>") -> Tuple[Model, Dict]:
    """チェックポイントを復元する

    エントリはヘッダの設定から組んだモデルと照合しながら読む。CRC が合っていて
    形が違えば CheckpointShapeError、CRC も合わなければ CorruptCheckpointError。
    """
    if len(data) < MIN_SIZE:
        raise TruncatedCheckpointError(f"checkpoint {path} is truncated at byte {len(data)}")
    reader = _Reader(data, path)
    if reader.take(4) != MAGIC:
        raise BadMagicError(f"{path} is not a checkpoint (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint {path} has version {version}, expected {VERSION}")
    crc_ok = _crc_matches(data)

    def mismatch(detail: str):
        if crc_ok:
            return CheckpointShapeError(f"checkpoint {path}: {detail}")
        return CorruptCheckpointError(f"checkpoint {path} failed the CRC check ({detail})")

    header_text = reader.text()
    try:
        header = json.loads(header_text)
        config = ModelConfig.parse_obj(header["config"])
        template = build_model(config, np.random.default_rng(0))
    except (ValueError, KeyError, TypeError, ValidationError, OnsetNetError) as exc:
        raise CorruptCheckpointError(f"checkpoint {path} has an unreadable header: {exc}") from exc
    expected = dict(state_tensors(template))

    count = reader.u32()
    if count != len(expected):
        raise mismatch(f"{count} entries, config implies {len(expected)}")
    tensors = {}
    for _ in range(count):
        name = reader.text()
        if name not in expected or name in tensors:
            raise mismatch(f"unexpected entry {name!r}")
        rank = reader.u32()
        if rank != expected[name].ndim:
            raise mismatch(f"{name} has rank {rank}, config implies {expected[name].ndim}")
        shape = tuple(reader.u32() for _ in range(rank))
        if shape != expected[name].shape:
            raise mismatch(f"{name} has shape {shape}, config implies {expected[name].shape}")
        code = reader.u32()
        if code not in DTYPE_CODES:
            raise CorruptCheckpointError(f"checkpoint {path}: unknown dtype code {code} for {name}")
        dtype = DTYPE_CODES[code]
        raw = reader.take(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize)
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))

    if reader.remaining < 4:
        raise TruncatedCheckpointError(f"checkpoint {path} is truncated at byte {len(data)}")
    if reader.remaining > 4:
        raise CorruptCheckpointError(f"checkpoint {path} has {reader.remaining - 4} trailing bytes")
    if not crc_ok:
        raise CorruptCheckpointError(f"checkpoint {path} failed the CRC check")

    dtypes = {tensor.dtype for tensor in tensors.values()}
    model = template
    if len(dtypes) == 1 and dtypes != {t.dtype for t in expected.values()}:
        model = build_model(config, np.random.default_rng(0), dtype=dtypes.pop())
    for name, target in state_tensors(model):
        target[...] = tensors[name]
    return model, header.get("metadata", {})


def load_checkpoint(path) -> Tuple[Model, Dict]:
    """チェックポイントを読み込み (モデル, メタデータ) を返す"""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(data, path)
