"""各演算とモデル全体の損失に対する勾配チェック (倍精度、小さな形状)"""
import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from onsetnet.errors import ConfigError
from onsetnet.network import backward, build_model, forward_with_cache, parameters, weight_parameters
from onsetnet.nn.gradcheck import grad_check
from onsetnet.nn.losses import l2_penalty, weighted_soft_xent
from onsetnet.nn.ops import (
    batchnorm_backward,
    batchnorm_forward,
    concat_backward,
    concat_forward,
    conv3d_backward,
    conv3d_forward,
    dropout_backward,
    dropout_forward,
    linear_backward,
    linear_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
)
from onsetnet.nn.tensor import CHECK_DTYPE, TRAIN, BatchNormState, ConvSpec, LossSpec
from onsetnet.schemas import ModelConfig

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
SCOPES = ("ops", "model", "all")
# 故障注入: 指定した演算の解析的勾配をこの倍率でずらす
CORRUPTION_SCALE = 1.1

OP_NAMES = ("conv3d", "maxpool2d", "relu", "batchnorm", "dropout", "linear", "concat", "weighted_soft_xent")
MODEL_NAME = "model"

Case = Tuple[Callable, List[np.ndarray], Dict]


def _conv3d(rng) -> Case:
    spec = ConvSpec(out_channels=3, kernel=(2, 3, 3), spatial_padding=(1, 1))

    def op(values):
        out, cache = conv3d_forward(values[0], values[1], spec)
        return out, lambda up: conv3d_backward(up, cache)

    return op, [rng.standard_normal((2, 2, 4, 5, 5)), rng.standard_normal((3, 2, 2, 3, 3))], {}


def _maxpool2d(rng) -> Case:
    # 同値がないよう間隔を空けた値を並べる
    x = (rng.permutation(2 * 2 * 3 * 4 * 4) * 0.01).reshape(2, 2, 3, 4, 4)

    def op(values):
        out, cache = maxpool2d_forward(values[0], (2, 2))
        return out, lambda up: [maxpool2d_backward(up, cache)]

    return op, [x], {}


def _relu(rng) -> Case:
    # 0 の近くは避ける
    x = rng.uniform(0.1, 1.0, size=(3, 4, 5)) * rng.choice([-1.0, 1.0], size=(3, 4, 5))

    def op(values):
        out, mask = relu_forward(values[0])
        return out, lambda up: [relu_backward(up, mask)]

    return op, [x], {}


def _batchnorm(rng) -> Case:
    channels = 3

    def op(values):
        state = BatchNormState.create(channels, CHECK_DTYPE)
        state.gamma = values[1]
        out, cache = batchnorm_forward(values[0], state, TRAIN, update_stats=False)
        return out, lambda up: batchnorm_backward(up, cache)

    return op, [rng.standard_normal((4, channels, 2, 3, 3)), rng.uniform(0.5, 1.5, size=channels)], {}


def _dropout(rng) -> Case:
    def op(values):
        # 毎回同じマスクになるよう乱数を作り直す
        out, mask = dropout_forward(values[0], 0.5, TRAIN, np.random.default_rng(7))
        return out, lambda up: [dropout_backward(up, mask)]

    return op, [rng.standard_normal((6, 8))], {}


def _linear(rng) -> Case:
    def op(values):
        out, cache = linear_forward(values[0], values[1])
        return out, lambda up: linear_backward(up, cache)

    return op, [rng.standard_normal((4, 5)), rng.standard_normal((5, 3))], {}


def _concat(rng) -> Case:
    def op(values):
        out, widths = concat_forward(values)
        return out, lambda up: concat_backward(up, widths)

    return op, [rng.standard_normal((3, 2)), rng.standard_normal((3, 4)), rng.standard_normal((3, 1))], {}


def _weighted_soft_xent(rng) -> Case:
    spec = LossSpec((1.0, 2.0))
    near = rng.uniform(0.0, 1.0, size=6)
    targets = np.stack([near, 1.0 - near], axis=1)

    def op(values):
        loss, grad = weighted_soft_xent(values[0], targets, spec)
        return loss, lambda up: [grad * up]

    return op, [rng.standard_normal((6, 2))], {}


def tiny_model_config() -> ModelConfig:
    """勾配チェック用の小さなモデル (2 ストリーム、2x2 画素、1 チャネル)"""
    return ModelConfig(
        roi_names=["mouth", "clarinet_tip"],
        roi_pixels=(2, 2),
        channels_in=1,
        conv_channels=(2, 2, 3, 2, 2),
        pool_after=[1],
        fc1_width=3,
        fc2_width=4,
        dropout_rate=0.5,
        dtype="float64",
    )


def _model(rng) -> Case:
    config = tiny_model_config()
    model = build_model(config, rng, dtype=CHECK_DTYPE)
    names = [name for name, _ in parameters(model)]
    batch = rng.standard_normal((3, len(config.roi_names), 1, config.input_frames) + tuple(config.roi_pixels))
    near = rng.uniform(0.0, 1.0, size=3)
    targets = np.stack([near, 1.0 - near], axis=1)
    spec = LossSpec((1.0, 2.0))
    lam = 1e-2

    def op(values):
        for name, value in zip(names, values):
            if name.endswith(".bn.gamma"):
                model.norms[name[: -len(".bn.gamma")]].gamma = value
            else:
                model.weights[name] = value
        _, logits, cache = forward_with_cache(model, batch, TRAIN, np.random.default_rng(11))
        data_loss, grad_logits = weighted_soft_xent(logits, targets, spec)
        named = weight_parameters(model)
        penalty, l2_grads = l2_penalty([tensor for _, tensor in named], lam)

        def grads(up):
            by_name = backward(model, cache, grad_logits)
            for (name, _), grad in zip(named, l2_grads):
                by_name[name] = by_name[name] + grad
            return [by_name[name] * up for name in names]

        return data_loss + penalty, grads

    return op, [tensor.copy() for _, tensor in parameters(model)], {"max_coords": 10, "floor": 1e-5}


CASES = {
    "conv3d": _conv3d,
    "maxpool2d": _maxpool2d,
    "relu": _relu,
    "batchnorm": _batchnorm,
    "dropout": _dropout,
    "linear": _linear,
    "concat": _concat,
    "weighted_soft_xent": _weighted_soft_xent,
    MODEL_NAME: _model,
}


def _corrupted(op: Callable) -> Callable:
    def wrapped(values):
        out, grads = op(values)
        return out, lambda up: [g * CORRUPTION_SCALE for g in grads(up)]

    return wrapped


def run_gradchecks(seed: int = 0, scope: str = "all", corrupt: Optional[str] = None) -> Dict[str, float]:
    """演算名 -> 最大相対誤差"""
    if scope not in SCOPES:
        raise ConfigError(f"gradcheck scope must be one of {SCOPES}, got {scope!r}")
    names = list(OP_NAMES) if scope in ("ops", "all") else []
    if scope in ("model", "all"):
        names.append(MODEL_NAME)
    if corrupt is not None and corrupt not in names:
        raise ConfigError(f"cannot corrupt {corrupt!r}: not among the checked ops {names}")

    errors = {}
    for name in names:
        rng = np.random.default_rng([seed, len(errors)])
        op, inputs, options = CASES[name](rng)
        if name == corrupt:
            op = _corrupted(op)
        errors[name] = grad_check(op, inputs, seed=seed, **options)
        logger.debug("gradcheck %s: max relative error %.3e", name, errors[name])
    return errors
