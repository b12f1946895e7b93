"""ROI ごとのストリームを持つ 3D CNN

各ストリーム: CONV1-5 (conv -> BN -> ReLU -> 必要なら空間プーリング) と FC1。
全ストリームの FC1 を連結して FC2、出力層 (2 ユニット) へつなぐ。
バイアス項はどの層にも存在しない。
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from onsetnet.errors import ConfigError, ShapeError
from onsetnet.nn.losses import softmax
from onsetnet.nn.ops import (
    batchnorm_backward,
    batchnorm_forward,
    concat_backward,
    concat_forward,
    conv3d_backward,
    conv3d_forward,
    dropout_backward,
    dropout_forward,
    inactive_fraction,
    linear_backward,
    linear_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
)
from onsetnet.nn.tensor import TRAIN, BatchNormState, ConvSpec, Tensor, check_mode, expect_rank
from onsetnet.schemas import ModelConfig

logger = logging.getLogger(__name__)

OUTPUT_UNITS = 2
POOL_WINDOW = (2, 2)
CONV_LAYERS = 5


@dataclass
class Model:
    config: ModelConfig
    weights: Dict[str, Tensor]
    norms: Dict[str, BatchNormState]

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.weights.values())).dtype

    @property
    def streams(self) -> List[str]:
        return list(self.config.roi_names)


@dataclass
class ForwardCache:
    streams: List[tuple] = field(default_factory=list)
    widths: List[int] = field(default_factory=list)
    fc2: Optional[tuple] = None
    output: Optional[tuple] = None
    # FC1 の ReLU 出力 (dropout 前)、ストリーム独立性の確認用
    features: List[Tensor] = field(default_factory=list)
    activity: Dict[str, List[float]] = field(default_factory=dict)


def temporal_extents(config: ModelConfig) -> List[int]:
    return config.temporal_extents()


def check_temporal_schedule(config: ModelConfig) -> None:
    """CONV5 後の時間方向の長さがちょうど 1 になることを確認する"""
    extents = config.temporal_extents()
    if min(extents) < 1 or extents[-1] != 1:
        raise ConfigError(
            f"temporal kernels {tuple(config.temporal_kernels)} on {config.input_frames} frames give "
            f"per-layer extents {extents}; the extent after CONV5 must be exactly 1"
        )


def conv_specs(config: ModelConfig) -> List[ConvSpec]:
    return [
        ConvSpec(
            out_channels=channels,
            kernel=(kt, k, k),
            spatial_padding=((k - 1) // 2, (k - 1) // 2),
        )
        for channels, kt, k in zip(config.conv_channels, config.temporal_kernels, config.spatial_kernels)
    ]


def fc1_inputs(config: ModelConfig) -> int:
    height, width = config.spatial_extents()
    return config.conv_channels[-1] * config.temporal_extents()[-1] * height * width


def layer_layout(config: ModelConfig) -> Iterator[Tuple[str, Tuple[int, ...], Optional[int]]]:
    """(層名, 重みの形状, BN のチャネル数) を順に返す"""
    for roi in config.roi_names:
        channels_in = config.channels_in
        for i, spec in enumerate(conv_specs(config), start=1):
            yield f"{roi}.conv{i}", (spec.out_channels, channels_in) + tuple(spec.kernel), spec.out_channels
            channels_in = spec.out_channels
        yield f"{roi}.fc1", (fc1_inputs(config), config.fc1_width), config.fc1_width
    yield "fc2", (len(config.roi_names) * config.fc1_width, config.fc2_width), config.fc2_width
    yield "output", (config.fc2_width, OUTPUT_UNITS), None


def parameter_count(config: ModelConfig) -> int:
    """学習可能なパラメータ数 (重み + BN の gamma) の閉じた式"""
    per_stream = 0
    channels_in = config.channels_in
    for channels, kt, k in zip(config.conv_channels, config.temporal_kernels, config.spatial_kernels):
        per_stream += channels * channels_in * kt * k * k + channels
        channels_in = channels
    per_stream += fc1_inputs(config) * config.fc1_width + config.fc1_width
    merged = len(config.roi_names) * config.fc1_width * config.fc2_width + config.fc2_width
    return len(config.roi_names) * per_stream + merged + config.fc2_width * OUTPUT_UNITS


def _fans(shape: Tuple[int, ...]) -> Tuple[int, int]:
    if len(shape) == 2:
        return shape[0], shape[1]
    receptive = int(np.prod(shape[2:]))
    return shape[1] * receptive, shape[0] * receptive


def init_weight(shape, scheme: str, rng: np.random.Generator, dtype) -> Tensor:
    fan_in, fan_out = _fans(shape)
    if scheme == "he_normal":
        values = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    elif scheme == "glorot_uniform":
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        values = rng.uniform(-limit, limit, size=shape)
    else:
        raise ConfigError(f"unknown init scheme {scheme!r}")
    return values.astype(dtype)


def build_model(config: ModelConfig, rng: np.random.Generator, dtype=None) -> Model:
    """設定からモデルを構築し、重みを初期化する"""
    check_temporal_schedule(config)
    dtype = np.dtype(dtype or config.dtype)
    weights, norms = {}, {}
    for name, shape, bn_channels in layer_layout(config):
        weights[f"{name}.weight"] = init_weight(shape, config.init, rng, dtype)
        if bn_channels is not None:
            norms[name] = BatchNormState.create(bn_channels, dtype, config.bn_momentum, config.bn_epsilon)
    logger.debug(
        "built model: %d streams, temporal extents %s, %d parameters",
        len(config.roi_names), config.temporal_extents(), parameter_count(config),
    )
    return Model(config=config, weights=weights, norms=norms)


def parameters(model: Model) -> List[Tuple[str, Tensor]]:
    """学習可能なテンソルを (名前, テンソル) の順序付きリストで返す"""
    named = []
    for name, _, bn_channels in layer_layout(model.config):
        named.append((f"{name}.weight", model.weights[f"{name}.weight"]))
        if bn_channels is not None:
            named.append((f"{name}.bn.gamma", model.norms[name].gamma))
    return named


def weight_parameters(model: Model) -> List[Tuple[str, Tensor]]:
    """L2 正則化の対象 (BN の gamma を除く)"""
    return [(name, tensor) for name, tensor in parameters(model) if name.endswith(".weight")]


def state_tensors(model: Model) -> List[Tuple[str, Tensor]]:
    """チェックポイントに保存するテンソル (パラメータ + BN の移動統計量)"""
    named = []
    for name, _, bn_channels in layer_layout(model.config):
        named.append((f"{name}.weight", model.weights[f"{name}.weight"]))
        if bn_channels is not None:
            norm = model.norms[name]
            named.append((f"{name}.bn.gamma", norm.gamma))
            named.append((f"{name}.bn.running_mean", norm.running_mean))
            named.append((f"{name}.bn.running_var", norm.running_var))
    return named


def _dense_forward(x: Tensor, model: Model, name: str, mode: str, rng):
    out, c_linear = linear_forward(x, model.weights[f"{name}.weight"])
    out, c_bn = batchnorm_forward(out, model.norms[name], mode)
    active, c_relu = relu_forward(out)
    dropped, mask = dropout_forward(active, model.config.dropout_rate, mode, rng)
    return dropped, active, (c_linear, c_bn, c_relu, mask)


def _dense_backward(dout: Tensor, cache, name: str, grads: Dict[str, Tensor]) -> Tensor:
    c_linear, c_bn, c_relu, mask = cache
    d = dropout_backward(dout, mask)
    d = relu_backward(d, c_relu)
    d, grads[f"{name}.bn.gamma"] = batchnorm_backward(d, c_bn)
    d, grads[f"{name}.weight"] = linear_backward(d, c_linear)
    return d


def _check_batch(model: Model, batch: Tensor):
    expect_rank("model input [N, S, C, T, H, W]", batch, 6)
    config = model.config
    _, streams, channels, frames, height, width = batch.shape
    if streams != len(config.roi_names):
        raise ShapeError(f"model expects {len(config.roi_names)} streams, batch has {streams}")
    if (height, width) != tuple(config.roi_pixels):
        raise ShapeError(f"model expects ROI pixels {tuple(config.roi_pixels)}, batch has {(height, width)}")
    if channels != config.channels_in or frames != config.input_frames:
        raise ShapeError(
            f"model expects {config.channels_in} channels x {config.input_frames} frames, "
            f"batch has {channels} x {frames}"
        )


def forward_with_cache(model: Model, batch: Tensor, mode: str, rng: Optional[np.random.Generator] = None):
    """順伝播し、(確率, ロジット, 逆伝播用 cache) を返す"""
    _check_batch(model, batch)
    config = model.config
    check_mode(mode)
    if mode == TRAIN and config.dropout_rate > 0.0 and rng is None:
        raise ShapeError("train mode with dropout needs a seeded generator (rng)")
    x = np.asarray(batch, dtype=model.dtype)
    n = x.shape[0]
    specs = conv_specs(config)
    cache = ForwardCache()
    dropped_features = []

    for s, roi in enumerate(config.roi_names):
        h = x[:, s]
        layers = []
        for i, spec in enumerate(specs, start=1):
            name = f"{roi}.conv{i}"
            h, c_conv = conv3d_forward(h, model.weights[f"{name}.weight"], spec)
            h, c_bn = batchnorm_forward(h, model.norms[name], mode)
            h, c_relu = relu_forward(h)
            cache.activity.setdefault(f"conv{i}", []).append(inactive_fraction(c_relu))
            c_pool = None
            if i in config.pool_after:
                h, c_pool = maxpool2d_forward(h, POOL_WINDOW)
            layers.append((c_conv, c_bn, c_relu, c_pool))
        conv_shape = h.shape
        dropped, active, c_fc1 = _dense_forward(h.reshape(n, -1), model, f"{roi}.fc1", mode, rng)
        cache.activity.setdefault("fc1", []).append(inactive_fraction(c_fc1[2]))
        cache.streams.append((layers, conv_shape, c_fc1))
        cache.features.append(active)
        dropped_features.append(dropped)

    merged, cache.widths = concat_forward(dropped_features)
    hidden, _, cache.fc2 = _dense_forward(merged, model, "fc2", mode, rng)
    cache.activity["fc2"] = [inactive_fraction(cache.fc2[2])]
    logits, cache.output = linear_forward(hidden, model.weights["output.weight"])
    return softmax(logits), logits, cache


def forward(model: Model, batch: Tensor, mode: str, rng: Optional[np.random.Generator] = None):
    """順伝播して (確率 [N, 2], ロジット [N, 2]) を返す"""
    probs, logits, _ = forward_with_cache(model, batch, mode, rng)
    return probs, logits


def backward(model: Model, cache: ForwardCache, grad_logits: Tensor) -> Dict[str, Tensor]:
    """ロジットの勾配から全パラメータの勾配を求める (parameters と同じ順序)"""
    grads: Dict[str, Tensor] = {}
    d_hidden, grads["output.weight"] = linear_backward(grad_logits, cache.output)
    d_merged = _dense_backward(d_hidden, cache.fc2, "fc2", grads)
    d_features = concat_backward(d_merged, cache.widths)

    for roi, (layers, conv_shape, c_fc1), d_feature in zip(model.config.roi_names, cache.streams, d_features):
        d = _dense_backward(d_feature, c_fc1, f"{roi}.fc1", grads).reshape(conv_shape)
        for i in range(CONV_LAYERS, 0, -1):
            c_conv, c_bn, c_relu, c_pool = layers[i - 1]
            name = f"{roi}.conv{i}"
            if c_pool is not None:
                d = maxpool2d_backward(d, c_pool)
            d = relu_backward(d, c_relu)
            d, grads[f"{name}.bn.gamma"] = batchnorm_backward(d, c_bn)
            d, grads[f"{name}.weight"] = conv3d_backward(d, c_conv)

    return {name: grads[name] for name, _ in parameters(model)}


def inactive_fractions(cache: ForwardCache) -> Dict[str, float]:
    """層ごとの非活性ユニットの割合 (ストリーム平均)"""
    return {layer: float(np.mean(values)) for layer, values in cache.activity.items()}
