from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from onsetnet.nn.tensor import CHECK_DTYPE, Tensor

# forward(inputs) -> (出力, backward)。backward(上流勾配) は入力ごとの勾配のリストを返す
DifferentiableOp = Callable[[List[Tensor]], Tuple[object, Callable[[object], Sequence[Tensor]]]]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def _scalarize(output, upstream):
    if np.isscalar(output) or np.ndim(output) == 0:
        return float(output)
    return float(np.sum(np.asarray(output, dtype=np.float64) * upstream))


def grad_check(
    op: DifferentiableOp,
    inputs: Sequence[Tensor],
    epsilon: float = 1e-6,
    seed: int = 0,
    max_coords: Optional[int] = None,
    floor: float = 1e-8,
) -> float:
    """解析的な勾配と中心差分を比較し、最大相対誤差を返す

    出力がテンソルの場合は固定の乱数テンソルとの内積でスカラー化する。
    max_coords を指定すると各入力から要素をその数だけ抽出して調べる。
    floor は相対誤差の分母の下限。
    """
    rng = np.random.default_rng(seed)
    values = [np.array(x, dtype=CHECK_DTYPE) for x in inputs]

    output, backward = op(values)
    if np.isscalar(output) or np.ndim(output) == 0:
        upstream = 1.0
    else:
        upstream = rng.standard_normal(np.shape(output))
    analytic = backward(upstream)

    worst = 0.0
    for index, value in enumerate(values):
        grad = np.asarray(analytic[index], dtype=CHECK_DTYPE)
        flat = value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for coord in coords:
            original = flat[coord]
            flat[coord] = original + epsilon
            plus = _scalarize(op(values)[0], upstream)
            flat[coord] = original - epsilon
            minus = _scalarize(op(values)[0], upstream)
            flat[coord] = original
            numeric = (plus - minus) / (2.0 * epsilon)
            err = float(relative_error(np.array(grad.reshape(-1)[coord]), np.array(numeric), floor))
            worst = max(worst, err)
    return worst
