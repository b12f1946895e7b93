"""RMSprop (モーメンタムなし、非中心化) と学習率の減衰"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from onsetnet.errors import ShapeError
from onsetnet.nn.tensor import Tensor
from onsetnet.schemas import TrainConfig


@dataclass
class OptimizerState:
    rho: float = 0.9
    epsilon: float = 1e-8
    base_lr: float = 1e-3
    lr_decay: float = 0.95
    current_lr: float = 1e-3
    # パラメータ名 -> 勾配二乗の移動平均
    accumulators: Dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: TrainConfig) -> "OptimizerState":
        return cls(
            rho=config.rho,
            epsilon=config.epsilon,
            base_lr=config.base_lr,
            lr_decay=config.lr_decay,
            current_lr=config.base_lr,
        )

    def start_epoch(self, epoch: int) -> float:
        self.current_lr = lr_at(epoch, self.base_lr, self.lr_decay)
        return self.current_lr


def lr_at(epoch: int, base_lr: float, lr_decay: float) -> float:
    if epoch < 0:
        raise ShapeError(f"epoch must be >= 0, got {epoch}")
    return base_lr * lr_decay ** epoch


def rmsprop_step(
    params: Iterable[Tuple[str, Tensor]],
    grads: Mapping[str, Tensor],
    state: OptimizerState,
    lr: float,
) -> None:
    """s <- rho*s + (1-rho)*g^2、w <- w - lr*g/(sqrt(s)+eps) をその場で適用する"""
    params = list(params)
    for name, weight in params:
        if name not in grads:
            raise ShapeError(f"no gradient for parameter {name}")
        if grads[name].shape != weight.shape:
            raise ShapeError(f"gradient for {name} has shape {grads[name].shape}, parameter has {weight.shape}")

    for name, weight in params:
        grad = grads[name].astype(weight.dtype, copy=False)
        square = state.accumulators.get(name)
        if square is None:
            square = state.accumulators[name] = np.zeros_like(weight)
        square *= state.rho
        square += (1.0 - state.rho) * grad * grad
        weight -= (lr * grad / (np.sqrt(square) + state.epsilon)).astype(weight.dtype, copy=False)
