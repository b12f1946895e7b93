"""フレームとウィンドウのラベル付け

フレーム k は半開区間 [k/fps, (k+1)/fps) を表す。
"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Sequence, Tuple

import numpy as np

from onsetnet.schemas import FRAMES_AFTER, FRAMES_BEFORE

# k/fps ちょうどのオンセットが浮動小数点誤差で k-1 に落ちないための余裕
FRAME_EPSILON = 1e-9


class Label(str, Enum):
    ONSET = "onset"
    NEAR_ONSET = "near_onset"
    NON_ONSET = "non_onset"


def target_for(label: Label, near_target: float = 0.75) -> Tuple[float, float]:
    """2 要素のターゲット分布 (not-an-onset, onset)"""
    if label is Label.ONSET:
        return (0.0, 1.0)
    if label is Label.NEAR_ONSET:
        return (near_target, 1.0 - near_target)
    return (1.0, 0.0)


def onset_frames(onsets: Sequence[float], fps: float) -> np.ndarray:
    """オンセットを含むフレーム番号 (重複なし、昇順)"""
    times = np.asarray(onsets, dtype=np.float64)
    return np.unique(np.floor(times * fps + FRAME_EPSILON).astype(np.int64))


def label_frame(onsets: Sequence[float], fps: float, frame_index: int) -> Label:
    return Label.ONSET if frame_index in set(onset_frames(onsets, fps).tolist()) else Label.NON_ONSET


def _classify(frames: set, ref_frame: int, near_radius: int) -> Label:
    if ref_frame in frames:
        return Label.ONSET
    for distance in range(1, near_radius + 1):
        if ref_frame - distance in frames or ref_frame + distance in frames:
            return Label.NEAR_ONSET
    return Label.NON_ONSET


def classify_window(onsets: Sequence[float], fps: float, ref_frame: int, near_radius: int = 1) -> Label:
    """参照フレームがオンセットなら onset、隣接していれば near_onset"""
    return _classify(set(onset_frames(onsets, fps).tolist()), ref_frame, near_radius)


def classify_video(onsets: Sequence[float], fps: float, duration_frames: int, near_radius: int = 1) -> Dict[int, Label]:
    """範囲内の全参照フレームのラベル"""
    frames = set(onset_frames(onsets, fps).tolist())
    return {k: _classify(frames, k, near_radius) for k in window_refs(duration_frames)}


def window_refs(duration_frames: int) -> range:
    """前後のフレームが動画内に収まる参照フレーム"""
    return range(FRAMES_BEFORE, duration_frames - FRAMES_AFTER)


def window_span(ref_frame: int) -> Tuple[int, int]:
    """ウィンドウの先頭と末尾のフレーム (両端を含む)"""
    return ref_frame - FRAMES_BEFORE, ref_frame + FRAMES_AFTER


@dataclass(frozen=True)
class SampleWindow:
    video_id: str
    ref_frame: int
    label: Label
    target: Tuple[float, float]
    offset: Tuple[int, int] = (0, 0)

    @property
    def span(self) -> Tuple[int, int]:
        return window_span(self.ref_frame)

    @property
    def frames(self) -> range:
        first, last = self.span
        return range(first, last + 1)

