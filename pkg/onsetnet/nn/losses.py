from typing import List, Sequence, Tuple

import numpy as np

from onsetnet.errors import ShapeError
from onsetnet.nn.tensor import LossSpec, Tensor, expect_rank

ROW_SUM_TOLERANCE = 1e-6


def softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def log_softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def check_targets(targets: Tensor):
    """ターゲット行が確率分布であることを確認する"""
    expect_rank("targets", targets, 2)
    if np.any(targets < 0.0) or np.any(targets > 1.0):
        raise ShapeError("targets must lie in [0, 1]")
    row_sums = targets.astype(np.float64).sum(axis=1)
    bad = np.flatnonzero(np.abs(row_sums - 1.0) > ROW_SUM_TOLERANCE)
    if bad.size:
        row = int(bad[0])
        raise ShapeError(f"target row {row} sums to {row_sums[row]:.8f}, expected 1")


def weighted_soft_xent(logits: Tensor, targets: Tensor, spec: LossSpec) -> Tuple[float, Tensor]:
    """重み付きソフトターゲット交差エントロピー

    loss = mean_n( -sum_k c_k * t_nk * log softmax(z_n)_k )
    """
    expect_rank("logits", logits, 2)
    if logits.shape != targets.shape or logits.shape[1] != 2:
        raise ShapeError(f"logits {logits.shape} and targets {targets.shape} must both be [N, 2]")
    check_targets(targets)

    z = logits.astype(np.float64)
    t = targets.astype(np.float64)
    weighted = t * spec.weights()
    n = z.shape[0]
    log_probs = log_softmax(z)
    loss = float(-(weighted * log_probs).sum() / n)
    grad = (weighted.sum(axis=1, keepdims=True) * np.exp(log_probs) - weighted) / n
    return loss, grad.astype(logits.dtype)


def weighted_soft_xent_from_probs(probs: Tensor, targets: Tensor, spec: LossSpec) -> float:
    """確率から損失だけを計算する (検証用)"""
    check_targets(targets)
    clipped = np.clip(probs.astype(np.float64), 1e-12, 1.0)
    weighted = targets.astype(np.float64) * spec.weights()
    return float(-(weighted * np.log(clipped)).sum() / max(len(probs), 1))


def l2_penalty(params: Sequence[Tensor], lam: float) -> Tuple[float, List[Tensor]]:
    """penalty = lam * sum ||w||^2 / 2、勾配は lam * w"""
    if lam < 0:
        raise ShapeError(f"l2 lambda must be >= 0, got {lam}")
    penalty = 0.5 * lam * sum(float(np.sum(np.square(p, dtype=np.float64))) for p in params)
    grads = [(lam * p).astype(p.dtype, copy=False) for p in params]
    return penalty, grads
