"""乱数のサブストリーム

すべての乱数は 1 つの 64 bit シードから、用途ごとのラベル付きサブストリームとして作る。
ある用途を無効にしても他の用途の乱数列は変わらない。
"""
import zlib
from typing import Union

import numpy as np

Label = Union[str, int]


def _entropy(seed: int, labels) -> list:
    words = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF]
    for label in labels:
        if isinstance(label, str):
            words.append(zlib.crc32(label.encode("utf-8")))
        else:
            words.append(int(label) & 0xFFFFFFFF)
    return words


def substream(seed: int, *labels: Label) -> np.random.Generator:
    """(シード, ラベル列) で決まる乱数生成器を返す"""
    return np.random.default_rng(np.random.SeedSequence(_entropy(seed, labels)))
