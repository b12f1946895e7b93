import numpy as np
import pytest

from onsetnet.errors import ShapeError
from onsetnet.nn.ops import (
    batchnorm_backward,
    batchnorm_forward,
    concat_backward,
    concat_forward,
    conv3d_backward,
    conv3d_forward,
    dropout_backward,
    dropout_forward,
    linear_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
)
from onsetnet.nn.tensor import CHECK_DTYPE, EVAL, TRAIN, BatchNormState, ConvSpec, as_tensor


def naive_conv3d(x, w, padding):
    """6 重ループによる畳み込み (比較用)"""
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (ph, ph), (pw, pw)))
    n, c, t, h, width = xp.shape
    f, _, kt, kh, kw = w.shape
    out = np.zeros((n, f, t - kt + 1, h - kh + 1, width - kw + 1))
    for b in range(n):
        for o in range(f):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    for k in range(out.shape[4]):
                        out[b, o, i, j, k] = np.sum(xp[b, :, i:i + kt, j:j + kh, k:k + kw] * w[o])
    return out


class TestTensor:
    def test_rank_and_extents(self):
        assert as_tensor(np.zeros((2, 3))).dtype == np.float32
        with pytest.raises(ShapeError):
            as_tensor(np.zeros((1, 1, 1, 1, 1, 1)))
        with pytest.raises(ShapeError):
            as_tensor(np.zeros((2, 0)))

    def test_conv_spec_rejects_bad_kernels(self):
        with pytest.raises(ShapeError):
            ConvSpec(out_channels=2, kernel=(0, 3, 3))
        spec = ConvSpec(out_channels=2, kernel=(3, 3, 3), spatial_padding=(1, 1))
        assert spec.temporal_padding == 0
        assert spec.stride == (1, 1, 1)


class TestConv3d:
    def test_output_shape(self, rng):
        spec = ConvSpec(out_channels=2, kernel=(3, 3, 3), spatial_padding=(1, 1))
        out, _ = conv3d_forward(rng.standard_normal((1, 1, 9, 8, 8)), rng.standard_normal((2, 1, 3, 3, 3)), spec)
        assert out.shape == (1, 2, 7, 8, 8)

    def test_zero_weights(self, rng):
        spec = ConvSpec(out_channels=2, kernel=(3, 3, 3), spatial_padding=(1, 1))
        out, _ = conv3d_forward(rng.standard_normal((2, 1, 5, 4, 4)), np.zeros((2, 1, 3, 3, 3)), spec)
        assert not out.any()

    @pytest.mark.parametrize("padding", [(0, 0), (1, 1)])
    def test_matches_loop_oracle(self, rng, padding):
        x = rng.standard_normal((1, 2, 5, 6, 6))
        w = rng.standard_normal((3, 2, 3, 3, 3))
        out, _ = conv3d_forward(x, w, ConvSpec(out_channels=3, kernel=(3, 3, 3), spatial_padding=padding))
        np.testing.assert_allclose(out, naive_conv3d(x, w, padding), atol=1e-6)

    def test_backward_shapes(self, rng):
        x = rng.standard_normal((2, 2, 4, 5, 5))
        w = rng.standard_normal((3, 2, 2, 3, 3))
        out, cache = conv3d_forward(x, w, ConvSpec(out_channels=3, kernel=(2, 3, 3), spatial_padding=(1, 1)))
        dx, dw = conv3d_backward(np.ones_like(out), cache)
        assert dx.shape == x.shape
        assert dw.shape == w.shape

    def test_channel_mismatch(self, rng):
        spec = ConvSpec(out_channels=2, kernel=(3, 3, 3), spatial_padding=(1, 1))
        with pytest.raises(ShapeError, match="channels"):
            conv3d_forward(rng.standard_normal((1, 3, 5, 4, 4)), rng.standard_normal((2, 1, 3, 3, 3)), spec)

    def test_time_shorter_than_kernel(self, rng):
        spec = ConvSpec(out_channels=1, kernel=(3, 1, 1))
        with pytest.raises(ShapeError, match="time extent"):
            conv3d_forward(rng.standard_normal((1, 1, 2, 4, 4)), rng.standard_normal((1, 1, 3, 1, 1)), spec)


class TestMaxPool:
    def test_time_extent_preserved(self, rng):
        out, _ = maxpool2d_forward(rng.standard_normal((1, 1, 9, 4, 4)), (2, 2))
        assert out.shape == (1, 1, 9, 2, 2)

    def test_matches_window_max(self, rng):
        x = rng.standard_normal((1, 2, 3, 4, 4))
        out, _ = maxpool2d_forward(x, (2, 2))
        for i in range(2):
            for j in range(2):
                expected = x[..., 2 * i:2 * i + 2, 2 * j:2 * j + 2].max(axis=(-2, -1))
                np.testing.assert_array_equal(out[..., i, j], expected)

    def test_ties_route_to_first_element(self):
        x = np.full((1, 1, 2, 4, 4), 3.0)
        out, cache = maxpool2d_forward(x, (2, 2))
        assert np.all(out == 3.0)
        dx = maxpool2d_backward(np.ones_like(out), cache)
        expected = np.zeros_like(x)
        expected[..., ::2, ::2] = 1.0
        np.testing.assert_array_equal(dx, expected)

    def test_non_divisible(self, rng):
        with pytest.raises(ShapeError):
            maxpool2d_forward(rng.standard_normal((1, 1, 2, 5, 4)), (2, 2))


class TestRelu:
    def test_values(self):
        out, mask = relu_forward(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out, [0.0, 0.0, 2.0])
        np.testing.assert_array_equal(relu_backward(np.ones(3), mask), [0.0, 0.0, 1.0])

    def test_all_negative(self, rng):
        x = -rng.uniform(0.1, 1.0, size=(3, 4))
        out, mask = relu_forward(x)
        assert not out.any()
        assert not relu_backward(np.ones_like(x), mask).any()


class TestBatchNorm:
    def test_train_normalizes_per_channel(self, rng):
        x = rng.standard_normal((4, 3, 2, 2, 2)).astype(CHECK_DTYPE) * 5.0 + 2.0
        state = BatchNormState.create(3, CHECK_DTYPE)
        out, _ = batchnorm_forward(x, state, TRAIN)
        axes = (0, 2, 3, 4)
        assert np.all(np.abs(out.mean(axis=axes)) < 1e-5)
        np.testing.assert_allclose(out.var(axis=axes), 1.0, atol=1e-4)

    def test_zero_gamma(self, rng):
        state = BatchNormState.create(3, CHECK_DTYPE)
        state.gamma[:] = 0.0
        out, _ = batchnorm_forward(rng.standard_normal((4, 3, 2)), state, TRAIN)
        assert not out.any()

    def test_running_stats_update(self, rng):
        x = rng.standard_normal((8, 2, 3)) + 4.0
        state = BatchNormState.create(2, CHECK_DTYPE)
        batchnorm_forward(x, state, TRAIN)
        np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=(0, 2)))
        np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.var(axis=(0, 2)))
        assert np.all(state.running_var >= 0)

    def test_eval_uses_running_stats(self, rng):
        state = BatchNormState.create(2, CHECK_DTYPE)
        state.running_mean[:] = [1.0, -1.0]
        state.running_var[:] = [4.0, 1.0]
        x = rng.standard_normal((3, 2))
        out, cache = batchnorm_forward(x, state, EVAL)
        expected = (x - state.running_mean) / np.sqrt(state.running_var + state.epsilon)
        np.testing.assert_allclose(out, expected)
        dx, _ = batchnorm_backward(np.ones_like(x), cache)
        np.testing.assert_allclose(dx, np.broadcast_to(1.0 / np.sqrt(state.running_var + state.epsilon), x.shape))

    def test_single_value_rejected(self):
        state = BatchNormState.create(1, CHECK_DTYPE)
        with pytest.raises(ShapeError, match="at least 2"):
            batchnorm_forward(np.ones((1, 1, 1, 1, 1)), state, TRAIN)


class TestDropout:
    def test_rate_zero_is_identity(self, rng):
        x = rng.standard_normal((4, 5))
        for mode in (TRAIN, EVAL):
            out, _ = dropout_forward(x, 0.0, mode, rng)
            np.testing.assert_array_equal(out, x)

    def test_eval_is_identity(self, rng):
        x = rng.standard_normal((4, 5))
        out, mask = dropout_forward(x, 0.7, EVAL, rng)
        np.testing.assert_array_equal(out, x)
        np.testing.assert_array_equal(dropout_backward(x, mask), x)

    def test_survivor_fraction_and_mean(self):
        size = 100_000
        out, mask = dropout_forward(np.ones(size), 0.5, TRAIN, np.random.default_rng(0))
        survivors = np.count_nonzero(out) / size
        assert abs(survivors - 0.5) < 3 * np.sqrt(0.25 / size)
        assert abs(out.mean() - 1.0) < 3 / np.sqrt(size)
        np.testing.assert_array_equal(dropout_backward(np.ones(size), mask), out)

    def test_mask_reproducible(self, rng):
        x = rng.standard_normal((6, 8))
        a, _ = dropout_forward(x, 0.5, TRAIN, np.random.default_rng(9))
        b, _ = dropout_forward(x, 0.5, TRAIN, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_rate_one_rejected(self, rng):
        with pytest.raises(ShapeError):
            dropout_forward(np.ones(3), 1.0, TRAIN, rng)

    def test_train_mode_needs_a_generator(self):
        with pytest.raises(ShapeError, match="rng"):
            dropout_forward(np.ones(3), 0.5, TRAIN, None)
        out, _ = dropout_forward(np.ones(3), 0.5, EVAL, None)
        np.testing.assert_array_equal(out, np.ones(3))


class TestLinearConcat:
    def test_identity_and_zero(self, rng):
        x = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(linear_forward(x, np.eye(4))[0], x)
        assert not linear_forward(x, np.zeros((4, 2)))[0].any()

    def test_matches_loop_matmul(self, rng):
        x, w = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        expected = np.array([[sum(x[i, k] * w[k, j] for k in range(4)) for j in range(2)] for i in range(3)])
        np.testing.assert_allclose(linear_forward(x, w)[0], expected, atol=1e-6)

    def test_mismatch(self, rng):
        with pytest.raises(ShapeError):
            linear_forward(rng.standard_normal((3, 4)), rng.standard_normal((3, 2)))

    def test_concat_layout_and_inverse(self, rng):
        a, b = rng.standard_normal((2, 2)), rng.standard_normal((2, 3))
        out, widths = concat_forward([a, b])
        assert out.shape == (2, 5)
        np.testing.assert_array_equal(out[:, :2], a)
        parts = concat_backward(out, widths)
        np.testing.assert_array_equal(parts[0], a)
        np.testing.assert_array_equal(parts[1], b)
        single, _ = concat_forward([a])
        np.testing.assert_array_equal(single, a)

    def test_concat_batch_mismatch(self, rng):
        with pytest.raises(ShapeError):
            concat_forward([rng.standard_normal((2, 2)), rng.standard_normal((3, 2))])
