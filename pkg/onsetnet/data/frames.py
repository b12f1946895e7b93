"""フレーム画像の読み込みと向き付き ROI の切り出し"""
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy.ndimage import map_coordinates

from onsetnet.data.annotations import OnsetDataset, RoiTrack
from onsetnet.data.labels import SampleWindow, window_span
from onsetnet.errors import DataError, ShapeError
from onsetnet.nn.tensor import DEFAULT_DTYPE, Tensor

logger = logging.getLogger(__name__)

FRAME_PATTERN = "{:06d}.png"


class ClampCounter:
    """フレーム外にはみ出して端でクランプされたボックスの数"""

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n: int = 1):
        with self._lock:
            self.count += n

    def reset(self) -> int:
        with self._lock:
            count, self.count = self.count, 0
        return count


class FrameStore:
    """PNG フレームを読み込む (LRU キャッシュ付き)"""

    def __init__(self, dataset: OnsetDataset, cache_size: int = 512):
        self.dataset = dataset
        self._load = lru_cache(maxsize=cache_size)(self._read)

    def _read(self, video_id: str, frame_index: int) -> np.ndarray:
        record = self.dataset.video(video_id)
        path = record.frames_dir / FRAME_PATTERN.format(frame_index)
        try:
            with Image.open(path) as image:
                array = np.asarray(image.convert("RGB"), dtype=np.uint8)
        except OSError as exc:
            raise DataError(f"{video_id}: cannot read frame {frame_index} ({path}): {exc}") from exc
        array.setflags(write=False)
        return array

    def frame(self, video_id: str, frame_index: int) -> np.ndarray:
        return self._load(video_id, frame_index)

    def video(self, video_id: str) -> "VideoFrames":
        return VideoFrames(self, video_id)


class VideoFrames:
    """1 本の動画のフレームを frames[k] で引けるようにする"""

    def __init__(self, store: FrameStore, video_id: str):
        self.store = store
        self.video_id = video_id

    def __getitem__(self, frame_index: int) -> np.ndarray:
        return self.store.frame(self.video_id, frame_index)


def sample_grid(
    box, offset: Tuple[int, int], out_pixels: Tuple[int, int], margin: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """出力画素ごとのフレーム上の標本位置 (行, 列) を返す

    ボックスを中心まわりに正立させて (out_pixels + margin) に再標本化し、
    そこから out_pixels を中央 + (dx, dy) の位置で切り出す。
    切り出した画素だけを標本化するので、大きい画像は作らない。
    画素 i は [i, i+1) を覆い、中心は i + 0.5。
    """
    cx, cy, w, h, angle = (float(v) for v in box)
    out_h, out_w = out_pixels
    dx, dy = offset
    start = margin // 2
    local_x = (np.arange(out_w) + start + dx + 0.5) * (w / (out_w + margin)) - w / 2.0
    local_y = (np.arange(out_h) + start + dy + 0.5) * (h / (out_h + margin)) - h / 2.0
    lx, ly = np.meshgrid(local_x, local_y)
    theta = np.deg2rad(angle)
    cos, sin = np.cos(theta), np.sin(theta)
    x = cx + lx * cos - ly * sin
    y = cy + lx * sin + ly * cos
    return y - 0.5, x - 0.5


def sample_roi(
    image: np.ndarray, box, offset, out_pixels, channels: int = 3, margin: int = 0
) -> Tuple[np.ndarray, bool]:
    """1 フレームから 1 つの ROI を双線形補間で切り出す ([C, H, W]、[0, 1])"""
    rows, cols = sample_grid(box, offset, out_pixels, margin)
    height, width = image.shape[:2]
    clamped = bool(rows.min() < 0 or cols.min() < 0 or rows.max() > height - 1 or cols.max() > width - 1)
    pixels = image.astype(np.float32)
    if channels == 1:
        pixels = pixels.mean(axis=2, keepdims=True)
    planes = [
        map_coordinates(pixels[..., ch], [rows, cols], order=1, mode="nearest")
        for ch in range(channels)
    ]
    return np.clip(np.stack(planes) / 255.0, 0.0, 1.0), clamped


def extract_window(
    frames,
    roi_tracks: Sequence[RoiTrack],
    ref_frame: int,
    crop_jitter: Tuple[int, int],
    out_pixels: Tuple[int, int],
    margin: int = 8,
    channels: int = 3,
    counter: Optional[ClampCounter] = None,
) -> Tensor:
    """9 フレームのウィンドウを ROI ごとに切り出す ([S, C, 9, H, W])"""
    dx, dy = crop_jitter
    if 2 * max(abs(dx), abs(dy)) > margin:
        raise ShapeError(f"crop jitter {crop_jitter} exceeds half the crop margin {margin}")
    first, last = window_span(ref_frame)
    out = np.empty((len(roi_tracks), channels, last - first + 1) + tuple(out_pixels), dtype=DEFAULT_DTYPE)
    clamped = 0
    for t, frame_index in enumerate(range(first, last + 1)):
        image = frames[frame_index]
        for s, track in enumerate(roi_tracks):
            if not 0 <= frame_index < len(track.boxes):
                raise DataError(f"{track.video_id}: frame {frame_index} outside the ROI track")
            out[s, :, t], was_clamped = sample_roi(
                image, track.boxes[frame_index], crop_jitter, out_pixels, channels, margin
            )
            clamped += was_clamped
    if clamped and counter is not None:
        counter.add(clamped)
    return out


class WindowExtractor:
    """SampleWindow の並びをモデル入力 [N, S, C, 9, H, W] にする"""

    def __init__(
        self,
        dataset: OnsetDataset,
        roi_names: Sequence[str],
        out_pixels: Tuple[int, int],
        channels: int = 3,
        margin: int = 8,
        threads: int = 1,
        cache_size: int = 512,
    ):
        self.dataset = dataset
        self.roi_names = list(roi_names)
        self.out_pixels = tuple(out_pixels)
        self.channels = channels
        self.margin = margin
        self.threads = threads
        self.store = FrameStore(dataset, cache_size)
        self.counter = ClampCounter()

    def window(self, video_id: str, ref_frame: int, offset: Tuple[int, int] = (0, 0)) -> Tensor:
        record = self.dataset.video(video_id)
        tracks = [record.tracks[roi] for roi in self.roi_names]
        return extract_window(
            self.store.video(video_id), tracks, ref_frame, offset, self.out_pixels,
            margin=self.margin, channels=self.channels, counter=self.counter,
        )

    def _stack(self, keys: Sequence[Tuple[str, int, Tuple[int, int]]]) -> Tensor:
        def load(key) -> Tensor:
            return self.window(*key)

        if self.threads > 1 and len(keys) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                slabs = list(pool.map(load, keys))
        else:
            slabs = [load(key) for key in keys]
        return np.stack(slabs)

    def batch(self, windows: Sequence[SampleWindow]) -> Tensor:
        return self._stack([(w.video_id, w.ref_frame, w.offset) for w in windows])

    def refs(self, video_id: str, ref_frames: Sequence[int]) -> Tensor:
        """評価用: ずらしなしのウィンドウを参照フレームごとに並べる"""
        return self._stack([(video_id, int(k), (0, 0)) for k in ref_frames])
