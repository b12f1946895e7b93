"""机上で学習を確認するための合成データセット (C4S 形式)

各オンセットのフレームで、指定した ROI の中心に明るい円を描く (オンセットのフレームで
強さ 1.0、次のフレームで 0.5)。ROI は滑らかに動き、±15 度ほど回転する。
"""
import logging
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd
from PIL import Image, ImageDraw
from tqdm import tqdm

from onsetnet.core.seeding import substream
from onsetnet.data.annotations import BOX_FIELDS, ONSET_COLUMNS, ROI_COLUMNS
from onsetnet.data.frames import FRAME_PATTERN
from onsetnet.errors import StorageError
from onsetnet.schemas import FRAMES_AFTER, FRAMES_BEFORE, ROI_NAMES, DatasetManifest, SubjectEntry, SynthConfig, VideoEntry

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
# ROI の基準位置 (フレーム幅・高さに対する比率)
ANCHORS = {
    "mouth": (0.50, 0.25),
    "left_hand": (0.25, 0.70),
    "right_hand": (0.75, 0.70),
    "clarinet_tip": (0.50, 0.80),
}
DRIFT_PIXELS = 3.0
MAX_ANGLE = 15.0
CUE_LEVELS = (1.0, 0.5)
# ウィンドウが端で切れないよう、オンセットは両端から離す
EDGE_FRAMES = FRAMES_BEFORE + FRAMES_AFTER


def onset_schedule(rng: np.random.Generator, spec: SynthConfig, duration_frames: int) -> Tuple[np.ndarray, np.ndarray]:
    """オンセットのフレーム番号と時刻 (秒)"""
    extra = spec.mean_gap_frames - spec.min_gap_frames
    frames = []
    k = EDGE_FRAMES + int(rng.poisson(extra))
    while k < duration_frames - EDGE_FRAMES:
        frames.append(k)
        k += spec.min_gap_frames + int(rng.poisson(extra))
    frames = np.asarray(frames, dtype=np.int64)
    # フレーム内の位置は端を避ける
    fraction = rng.uniform(0.1, 0.9, size=len(frames))
    return frames, (frames + fraction) / spec.fps


def roi_tracks(rng: np.random.Generator, spec: SynthConfig, duration_frames: int) -> Dict[str, np.ndarray]:
    """ROI ごとの [F, 5] ボックス列。ゆっくりした正弦波の和で動かす"""
    t = np.arange(duration_frames) / spec.fps
    tracks = {}
    for roi in ROI_NAMES:
        ax, ay = ANCHORS[roi]
        freqs = rng.uniform(0.05, 0.3, size=3)
        phases = rng.uniform(0.0, 2 * np.pi, size=3)
        cx = ax * spec.frame_width + DRIFT_PIXELS * np.sin(2 * np.pi * freqs[0] * t + phases[0])
        cy = ay * spec.frame_height + DRIFT_PIXELS * np.sin(2 * np.pi * freqs[1] * t + phases[1])
        angle = MAX_ANGLE * np.sin(2 * np.pi * freqs[2] * t + phases[2])
        size = np.full(duration_frames, float(spec.roi_size))
        tracks[roi] = np.stack([cx, cy, size, size, angle], axis=1)
    return tracks


def box_corners(box) -> List[Tuple[float, float]]:
    cx, cy, w, h, angle = box
    theta = np.deg2rad(angle)
    cos, sin = np.cos(theta), np.sin(theta)
    corners = []
    for lx, ly in ((-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)):
        corners.append((cx + lx * cos - ly * sin, cy + lx * sin + ly * cos))
    return corners


class SubjectLook:
    """被験者ごとの見た目 (背景色と ROI の色)"""

    def __init__(self, rng: np.random.Generator):
        self.background = tuple(int(v) for v in rng.integers(40, 110, size=3))
        self.roi_colors = {roi: tuple(int(v) for v in rng.integers(60, 180, size=3)) for roi in ROI_NAMES}


def render_frame(
    rng: np.random.Generator,
    spec: SynthConfig,
    look: SubjectLook,
    boxes: Dict[str, np.ndarray],
    cue_level: float,
) -> np.ndarray:
    image = Image.new("RGB", (spec.frame_width, spec.frame_height), look.background)
    draw = ImageDraw.Draw(image)
    for roi in ROI_NAMES:
        draw.polygon(box_corners(boxes[roi]), fill=look.roi_colors[roi])
    pixels = np.asarray(image, dtype=np.float64) / 255.0

    if cue_level > 0.0:
        rows, cols = np.mgrid[0:spec.frame_height, 0:spec.frame_width]
        radius = spec.roi_size / 4.0
        for roi in spec.cue_rois:
            cx, cy = boxes[roi][0], boxes[roi][1]
            disc = ((cols + 0.5 - cx) ** 2 + (rows + 0.5 - cy) ** 2) <= radius ** 2
            pixels[disc] = (1.0 - cue_level) * pixels[disc] + cue_level

    pixels += rng.normal(0.0, spec.noise, size=pixels.shape)
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def _cue_levels(frames: np.ndarray, duration_frames: int) -> np.ndarray:
    levels = np.zeros(duration_frames)
    for shift, level in enumerate(CUE_LEVELS):
        target = frames + shift
        target = target[target < duration_frames]
        levels[target] = np.maximum(levels[target], level)
    return levels


def write_video(
    seed: int,
    spec: SynthConfig,
    look: SubjectLook,
    subject_index: int,
    video_index: int,
    video_id: str,
    video_dir: Path,
) -> VideoEntry:
    duration_frames = int(round(spec.duration_sec * spec.fps))
    rng = substream(seed, "synth", subject_index, video_index)
    onset_frame_idx, onset_times = onset_schedule(rng, spec, duration_frames)
    tracks = roi_tracks(rng, spec, duration_frames)
    levels = _cue_levels(onset_frame_idx, duration_frames)

    frames_dir = video_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    noise_rng = substream(seed, "synth", subject_index, video_index, "noise")
    for k in range(duration_frames):
        boxes = {roi: tracks[roi][k] for roi in ROI_NAMES}
        pixels = render_frame(noise_rng, spec, look, boxes, levels[k])
        Image.fromarray(pixels).save(frames_dir / FRAME_PATTERN.format(k))

    onsets = pd.DataFrame({"video_id": video_id, "onset_sec": onset_times}, columns=ONSET_COLUMNS)
    onsets.to_csv(video_dir / "onsets.csv", index=False, float_format="%.6f")

    rows = []
    for roi in ROI_NAMES:
        table = pd.DataFrame(tracks[roi], columns=BOX_FIELDS)
        table.insert(0, "roi_name", roi)
        table.insert(0, "frame_idx", np.arange(duration_frames))
        table.insert(0, "video_id", video_id)
        rows.append(table)
    rois = pd.concat(rows, ignore_index=True).sort_values(["frame_idx", "roi_name"], kind="mergesort")
    rois[ROI_COLUMNS].to_csv(video_dir / "rois.csv", index=False, float_format="%.4f")

    # マニフェストのパスはマニフェストの置き場所からの相対パス
    relative = f"{video_dir.parent.name}/{video_dir.name}"
    return VideoEntry(
        video_id=video_id,
        fps=spec.fps,
        duration_frames=duration_frames,
        frames_dir=f"{relative}/frames",
        onsets_csv=f"{relative}/onsets.csv",
        rois_csv=f"{relative}/rois.csv",
    )


def generate_synthetic(spec: SynthConfig, seed: int, out_dir) -> Path:
    """合成データセットを書き出し、マニフェストのパスを返す"""
    out_dir = Path(out_dir)
    subjects = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        jobs = [(s, v) for s in range(spec.subjects) for v in range(spec.videos_per_subject)]
        looks = {s: SubjectLook(substream(seed, "synth", "look", s)) for s in range(spec.subjects)}
        entries: Dict[int, List[VideoEntry]] = {s: [] for s in range(spec.subjects)}
        for s, v in tqdm(jobs, desc="synth", unit="video", leave=False, disable=None):
            subject_id = f"s{s:02d}"
            video_id = f"{subject_id}_v{v:02d}"
            entries[s].append(write_video(seed, spec, looks[s], s, v, video_id, out_dir / subject_id / video_id))
        for s in range(spec.subjects):
            subjects.append(SubjectEntry(id=f"s{s:02d}", videos=entries[s]))
        manifest_path = out_dir / MANIFEST_NAME
        manifest_path.write_text(DatasetManifest(subjects=subjects).json(indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write synthetic dataset to {out_dir}: {exc}") from exc
    logger.info("wrote %d subjects x %d videos to %s", spec.subjects, spec.videos_per_subject, out_dir)
    return manifest_path
