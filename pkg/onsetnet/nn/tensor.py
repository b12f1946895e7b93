from dataclasses import dataclass
from typing import Tuple

import numpy as np

from onsetnet.errors import ShapeError

# 活性値・パラメータはすべて numpy 配列で持つ
# レイアウト: [batch, channel, time, height, width]
Tensor = np.ndarray

DEFAULT_DTYPE = np.float32
CHECK_DTYPE = np.float64
MAX_RANK = 5

TRAIN = "train"
EVAL = "eval"
MODES = (TRAIN, EVAL)


def as_tensor(data, dtype=None) -> Tensor:
    """配列をテンソルとして検証して返す"""
    array = np.ascontiguousarray(data, dtype=dtype or DEFAULT_DTYPE)
    if array.ndim == 0 or array.ndim > MAX_RANK:
        raise ShapeError(f"tensor rank must be 1..{MAX_RANK}, got shape {array.shape}")
    if any(extent < 1 for extent in array.shape):
        raise ShapeError(f"tensor extents must be >= 1, got shape {array.shape}")
    return array


def expect_rank(name: str, x: Tensor, rank: int):
    if x.ndim != rank:
        raise ShapeError(f"{name}: expected rank {rank}, got shape {x.shape}")


def check_mode(mode: str):
    if mode not in MODES:
        raise ShapeError(f"mode must be one of {MODES}, got {mode!r}")


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: Tuple[int, int, int]
    spatial_padding: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.out_channels < 1:
            raise ShapeError(f"out_channels must be >= 1, got {self.out_channels}")
        if len(self.kernel) != 3 or any(k < 1 for k in self.kernel):
            raise ShapeError(f"kernel extents must be three values >= 1, got {self.kernel}")
        if len(self.spatial_padding) != 2 or any(p < 0 for p in self.spatial_padding):
            raise ShapeError(f"spatial padding must be two values >= 0, got {self.spatial_padding}")

    # 時間方向のパディングとストライドは固定
    @property
    def temporal_padding(self) -> int:
        return 0

    @property
    def stride(self) -> Tuple[int, int, int]:
        return (1, 1, 1)


@dataclass
class BatchNormState:
    """シフト項を持たないバッチ正規化の状態"""

    gamma: Tensor
    running_mean: Tensor
    running_var: Tensor
    momentum: float = 0.9
    epsilon: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=DEFAULT_DTYPE, momentum: float = 0.9, epsilon: float = 1e-5):
        if not 0.0 < momentum < 1.0:
            raise ShapeError(f"batchnorm momentum must be in (0, 1), got {momentum}")
        if epsilon <= 0.0:
            raise ShapeError(f"batchnorm epsilon must be positive, got {epsilon}")
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            epsilon=epsilon,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


@dataclass(frozen=True)
class LossSpec:
    class_weights: Tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if len(self.class_weights) != 2 or any(w <= 0 for w in self.class_weights):
            raise ShapeError(f"class weights must be two positive values, got {self.class_weights}")

    def weights(self, dtype=np.float64) -> np.ndarray:
        return np.asarray(self.class_weights, dtype=dtype)
