import math

import numpy as np
import pytest

from onsetnet.errors import ShapeError
from onsetnet.nn.losses import l2_penalty, log_softmax, softmax, weighted_soft_xent, weighted_soft_xent_from_probs
from onsetnet.nn.tensor import LossSpec


def test_uniform_logits_near_target():
    loss, _ = weighted_soft_xent(np.zeros((1, 2)), np.array([[0.75, 0.25]]), LossSpec())
    assert loss == pytest.approx(math.log(2.0))


def test_large_gap_gives_zero_loss():
    loss, grad = weighted_soft_xent(np.array([[50.0, -50.0]]), np.array([[1.0, 0.0]]), LossSpec())
    assert loss < 1e-12
    assert np.all(np.abs(grad) < 1e-12)


def test_hard_targets_match_plain_cross_entropy(rng):
    logits = rng.standard_normal((16, 2)) * 3.0
    labels = rng.integers(0, 2, size=16)
    targets = np.eye(2)[labels]
    loss, _ = weighted_soft_xent(logits, targets, LossSpec())
    exp = np.exp(logits)
    expected = -np.mean(np.log(exp[np.arange(16), labels] / exp.sum(axis=1)))
    assert loss == pytest.approx(expected, abs=1e-6)


def test_onset_weight_is_linear(rng):
    logits = rng.standard_normal((8, 2))
    near = rng.uniform(0.0, 1.0, size=8)
    targets = np.stack([near, 1.0 - near], axis=1)
    base, _ = weighted_soft_xent(logits, targets, LossSpec((1.0, 1.0)))
    doubled, _ = weighted_soft_xent(logits, targets, LossSpec((1.0, 2.0)))
    onset_term = -np.mean(targets[:, 1] * log_softmax(logits)[:, 1])
    assert doubled - base == pytest.approx(onset_term)


def test_gradient_matches_differences(rng):
    logits = rng.standard_normal((5, 2))
    targets = np.array([[0.75, 0.25], [0.0, 1.0], [1.0, 0.0], [0.5, 0.5], [0.2, 0.8]])
    spec = LossSpec((1.0, 3.0))
    _, grad = weighted_soft_xent(logits, targets, spec)
    eps = 1e-6
    for index in np.ndindex(logits.shape):
        plus, minus = logits.copy(), logits.copy()
        plus[index] += eps
        minus[index] -= eps
        numeric = (weighted_soft_xent(plus, targets, spec)[0] - weighted_soft_xent(minus, targets, spec)[0]) / (2 * eps)
        assert grad[index] == pytest.approx(numeric, abs=1e-7)


def test_stable_softmax():
    probs = softmax(np.array([[1000.0, 0.0], [0.0, 0.0]]))
    assert np.all(np.isfinite(probs))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)


@pytest.mark.parametrize("targets", [[[0.5, 0.4]], [[1.2, -0.2]]])
def test_bad_targets_rejected(targets):
    with pytest.raises(ShapeError):
        weighted_soft_xent(np.zeros((1, 2)), np.array(targets), LossSpec())


def test_non_positive_weights_rejected():
    with pytest.raises(ShapeError):
        LossSpec((1.0, 0.0))


def test_loss_from_probs_matches_logits(rng):
    logits = rng.standard_normal((6, 2))
    targets = np.tile([0.75, 0.25], (6, 1))
    expected, _ = weighted_soft_xent(logits, targets, LossSpec())
    assert weighted_soft_xent_from_probs(softmax(logits), targets, LossSpec()) == pytest.approx(expected)


class TestL2:
    def test_zero_lambda(self, rng):
        penalty, grads = l2_penalty([rng.standard_normal((3, 3))], 0.0)
        assert penalty == 0.0
        assert not grads[0].any()

    def test_hand_example(self):
        penalty, grads = l2_penalty([np.array([3.0, 4.0])], 1.0)
        assert penalty == pytest.approx(12.5)
        np.testing.assert_array_equal(grads[0], [3.0, 4.0])

    def test_permutation_invariant(self, rng):
        params = [rng.standard_normal(4), rng.standard_normal((2, 3))]
        assert l2_penalty(params, 0.3)[0] == pytest.approx(l2_penalty(params[::-1], 0.3)[0])

    def test_negative_lambda(self):
        with pytest.raises(ShapeError):
            l2_penalty([np.ones(2)], -1.0)
