"""フレームごとのオンセット確率からオンセット時刻を取り出す"""
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.ndimage import maximum_filter1d

from onsetnet.errors import ShapeError
from onsetnet.nn.tensor import Tensor


@dataclass(frozen=True)
class OnsetPrediction:
    video_id: str
    times: np.ndarray

    def __len__(self) -> int:
        return len(self.times)


def peak_frames(frame_probs: Tensor, threshold: float = 0.5, nms_radius: int = 2) -> List[int]:
    """閾値を超える極大のうち、±nms_radius 内で最大のものだけを残す (同値は早い方)"""
    probs = np.asarray(frame_probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ShapeError(f"frame probabilities must be 1-D, got shape {probs.shape}")
    if probs.size == 0:
        return []
    local_max = probs >= maximum_filter1d(probs, size=3, mode="constant", cval=0.0)
    candidates = np.flatnonzero(local_max & (probs > threshold))

    order = sorted(candidates.tolist(), key=lambda k: (-probs[k], k))
    suppressed = np.zeros(probs.size, dtype=bool)
    kept = []
    for k in order:
        if suppressed[k]:
            continue
        kept.append(k)
        suppressed[max(k - nms_radius, 0):k + nms_radius + 1] = True
    return sorted(kept)


def decode_onsets(
    frame_probs: Tensor,
    fps: float,
    threshold: float = 0.5,
    nms_radius: int = 2,
    video_id: str = "",
) -> OnsetPrediction:
    """オンセット時刻はフレームの中心 (k + 0.5) / fps"""
    frames = np.asarray(peak_frames(frame_probs, threshold, nms_radius), dtype=np.float64)
    return OnsetPrediction(video_id, (frames + 0.5) / fps)
