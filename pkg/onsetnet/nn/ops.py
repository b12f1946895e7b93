"""ネットワークで使う微分可能な演算

各演算は ``*_forward`` が (出力, cache) を返し、``*_backward`` が上流勾配と cache から
入力・重みの勾配を返す。時間軸を縮めるのは conv3d の valid 畳み込みだけで、
他の演算は時間軸の長さを変えない。
"""
from typing import List, Sequence, Tuple

import numpy as np

from onsetnet.errors import ShapeError
from onsetnet.nn.tensor import EVAL, TRAIN, BatchNormState, ConvSpec, Tensor, check_mode, expect_rank


def conv3d_forward(x: Tensor, w: Tensor, spec: ConvSpec):
    """3D 畳み込み (ストライド 1、時間方向パディングなし、バイアスなし)"""
    expect_rank("conv3d input", x, 5)
    expect_rank("conv3d weights", w, 5)
    n, c, t, h, width = x.shape
    f, wc, kt, kh, kw = w.shape
    if wc != c:
        raise ShapeError(f"conv3d: input has {c} channels but weights {w.shape} expect {wc}")
    if f != spec.out_channels or (kt, kh, kw) != tuple(spec.kernel):
        raise ShapeError(
            f"conv3d: weights {w.shape} do not match spec out_channels={spec.out_channels} kernel={spec.kernel}"
        )
    if t < kt:
        raise ShapeError(f"conv3d: time extent {t} is shorter than temporal kernel {kt}")
    ph, pw = spec.spatial_padding
    if h + 2 * ph < kh or width + 2 * pw < kw:
        raise ShapeError(
            f"conv3d: padded spatial extent ({h + 2 * ph}, {width + 2 * pw}) is smaller than kernel ({kh}, {kw})"
        )

    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (ph, ph), (pw, pw)))
    to, ho, wo = t - kt + 1, h + 2 * ph - kh + 1, width + 2 * pw - kw + 1
    out = np.zeros((n, to, ho, wo, f), dtype=np.result_type(x, w))
    # カーネルの各オフセットごとにチャネル方向の積和を足し込む
    for a in range(kt):
        for b in range(kh):
            for d in range(kw):
                patch = xp[:, :, a:a + to, b:b + ho, d:d + wo]
                out += np.tensordot(patch, w[:, :, a, b, d], axes=([1], [1]))
    out = np.ascontiguousarray(np.moveaxis(out, -1, 1))
    return out, (xp, w, spec, x.shape)


def conv3d_backward(dout: Tensor, cache) -> Tuple[Tensor, Tensor]:
    xp, w, spec, x_shape = cache
    _, _, kt, kh, kw = w.shape
    _, _, to, ho, wo = dout.shape
    ph, pw = spec.spatial_padding

    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    dout_last = np.moveaxis(dout, 1, -1)
    for a in range(kt):
        for b in range(kh):
            for d in range(kw):
                patch = xp[:, :, a:a + to, b:b + ho, d:d + wo]
                dw[:, :, a, b, d] = np.tensordot(dout, patch, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
                dpatch = np.tensordot(dout_last, w[:, :, a, b, d], axes=([4], [0]))
                dxp[:, :, a:a + to, b:b + ho, d:d + wo] += np.moveaxis(dpatch, -1, 1)

    h, width = x_shape[3], x_shape[4]
    dx = np.ascontiguousarray(dxp[:, :, :, ph:ph + h, pw:pw + width])
    return dx, dw


def maxpool2d_forward(x: Tensor, window: Tuple[int, int] = (2, 2)):
    """空間方向のみの最大値プーリング (時間軸はそのまま)"""
    expect_rank("maxpool2d input", x, 5)
    mh, mw = window
    n, c, t, h, width = x.shape
    if mh < 1 or mw < 1 or h % mh or width % mw:
        raise ShapeError(f"maxpool2d: spatial extents ({h}, {width}) are not divisible by window {window}")
    ho, wo = h // mh, width // mw
    blocks = x.reshape(n, c, t, ho, mh, wo, mw).transpose(0, 1, 2, 3, 5, 4, 6).reshape(n, c, t, ho, wo, mh * mw)
    # argmax は最初の最大値を返すので、同値のときは窓内の行優先で先頭が選ばれる
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return out, (x.shape, (mh, mw), argmax)


def maxpool2d_backward(dout: Tensor, cache) -> Tensor:
    x_shape, (mh, mw), argmax = cache
    n, c, t, h, width = x_shape
    ho, wo = h // mh, width // mw
    dblocks = np.zeros((n, c, t, ho, wo, mh * mw), dtype=dout.dtype)
    np.put_along_axis(dblocks, argmax[..., None], dout[..., None], axis=-1)
    return dblocks.reshape(n, c, t, ho, wo, mh, mw).transpose(0, 1, 2, 3, 5, 4, 6).reshape(x_shape)


def relu_forward(x: Tensor):
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype, copy=False), mask


def relu_backward(dout: Tensor, mask) -> Tensor:
    # x == 0 の劣勾配は 0
    return dout * mask


def inactive_fraction(relu_cache) -> float:
    """ReLU 出力が 0 だった要素の割合"""
    return float(1.0 - np.mean(relu_cache))


def batchnorm_forward(x: Tensor, state: BatchNormState, mode: str, update_stats: bool = True):
    """チャネル以外の全軸で正規化し gamma を掛ける (シフト項なし)"""
    check_mode(mode)
    if x.ndim < 2:
        raise ShapeError(f"batchnorm: expected [N, C, ...], got shape {x.shape}")
    channels = x.shape[1]
    if channels != state.channels:
        raise ShapeError(f"batchnorm: input has {channels} channels, state has {state.channels}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, channels) + (1,) * (x.ndim - 2)
    gamma = state.gamma.reshape(bshape)

    if mode == TRAIN:
        count = x.size // channels
        if count < 2:
            raise ShapeError(f"batchnorm: train mode needs at least 2 values per channel, got shape {x.shape}")
        mean = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + state.epsilon)
        xhat = (x - mean) * inv_std
        if update_stats:
            m = state.momentum
            state.running_mean[...] = m * state.running_mean + (1.0 - m) * mean.reshape(channels)
            state.running_var[...] = m * state.running_var + (1.0 - m) * var.reshape(channels)
        cache = (TRAIN, xhat, inv_std, gamma, axes, count)
    else:
        inv_std = 1.0 / np.sqrt(state.running_var.reshape(bshape) + state.epsilon)
        xhat = (x - state.running_mean.reshape(bshape)) * inv_std
        cache = (EVAL, xhat, inv_std, gamma, axes, None)
    return (gamma * xhat).astype(x.dtype, copy=False), cache


def batchnorm_backward(dout: Tensor, cache) -> Tuple[Tensor, Tensor]:
    mode, xhat, inv_std, gamma, axes, count = cache
    dgamma = (dout * xhat).sum(axis=axes)
    dxhat = dout * gamma
    if mode == TRAIN:
        dx = inv_std / count * (
            count * dxhat
            - dxhat.sum(axis=axes, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
        )
    else:
        dx = dxhat * inv_std
    return dx.astype(dout.dtype, copy=False), dgamma.astype(gamma.dtype, copy=False)


def dropout_forward(x: Tensor, rate: float, mode: str, rng: np.random.Generator):
    """inverted dropout: 学習時に生き残った要素を 1/(1-rate) 倍する"""
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
    check_mode(mode)
    if mode == EVAL or rate == 0.0:
        return x, None
    if rng is None:
        raise ShapeError("dropout in train mode needs a seeded generator (rng)")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def dropout_backward(dout: Tensor, mask) -> Tensor:
    if mask is None:
        return dout
    return dout * mask


def linear_forward(x: Tensor, w: Tensor):
    """全結合層 (バイアスなし)"""
    expect_rank("linear input", x, 2)
    expect_rank("linear weights", w, 2)
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weights {w.shape}")
    return x @ w, (x, w)


def linear_backward(dout: Tensor, cache) -> Tuple[Tensor, Tensor]:
    x, w = cache
    return dout @ w.T, x.T @ dout


def concat_forward(inputs: Sequence[Tensor]):
    """特徴量軸 (axis=1) での連結"""
    if not inputs:
        raise ShapeError("concat: no inputs")
    for x in inputs:
        expect_rank("concat input", x, 2)
    batch = inputs[0].shape[0]
    if any(x.shape[0] != batch for x in inputs):
        raise ShapeError(f"concat: batch extents differ: {[x.shape for x in inputs]}")
    widths = [x.shape[1] for x in inputs]
    return np.concatenate(inputs, axis=1), widths


def concat_backward(dout: Tensor, widths) -> List[Tensor]:
    splits = np.cumsum(widths)[:-1]
    return [np.ascontiguousarray(part) for part in np.split(dout, splits, axis=1)]
