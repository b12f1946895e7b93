"""許容誤差つきのオンセット照合と f 値"""
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np

from onsetnet.core.seeding import substream
from onsetnet.errors import ShapeError

# 50 ms ちょうどの差が浮動小数点誤差で外れないための余裕
TOLERANCE_SLACK = 1e-9


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: List[Tuple[int, int]] = field(default_factory=list)


def within_tolerance(a: float, b: float, tolerance: float) -> bool:
    return abs(a - b) <= tolerance + TOLERANCE_SLACK


def _sorted_times(name: str, times) -> np.ndarray:
    values = np.asarray(times, dtype=np.float64).reshape(-1)
    if values.size > 1 and np.any(np.diff(values) < 0):
        raise ShapeError(f"{name} onset times must be sorted")
    return values


def match_onsets(pred: Sequence[float], truth: Sequence[float], tolerance: float = 0.05) -> MatchResult:
    """時刻順の 2 ポインタ走査で 1 対 1 に対応付ける

    直線上の区間マッチングなので貪欲法で最大マッチングになる。
    """
    p = _sorted_times("predicted", pred)
    t = _sorted_times("ground-truth", truth)
    pairs = []
    i = j = 0
    while i < len(p) and j < len(t):
        if within_tolerance(p[i], t[j], tolerance):
            pairs.append((i, j))
            i += 1
            j += 1
        elif p[i] < t[j]:
            i += 1
        else:
            j += 1
    tp = len(pairs)
    return MatchResult(tp=tp, fp=len(p) - tp, fn=len(t) - tp, pairs=pairs)


def prf(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    if min(tp, fp, fn) < 0:
        raise ShapeError(f"counts must be >= 0, got tp={tp} fp={fp} fn={fn}")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f


def informed_random_baseline(
    truth: Sequence[float],
    duration_sec: float,
    trials: int = 1000,
    seed: Union[int, np.random.Generator] = 0,
    tolerance: float = 0.05,
) -> float:
    """正解のオンセット数だけ一様乱数で時刻を引き、f 値の平均を返す"""
    if trials < 1:
        raise ShapeError(f"trials must be >= 1, got {trials}")
    truth = _sorted_times("ground-truth", truth)
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "baseline")
    scores = []
    for _ in range(trials):
        guess = np.sort(rng.uniform(0.0, duration_sec, size=len(truth)))
        result = match_onsets(guess, truth, tolerance)
        scores.append(prf(result.tp, result.fp, result.fn)[2])
    return float(np.mean(scores))
