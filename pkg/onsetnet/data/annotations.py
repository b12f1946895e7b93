"""C4S 形式のアノテーション読み込み"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Set

import numpy as np
import pandas as pd
from pydantic import ValidationError

from onsetnet.errors import DataError
from onsetnet.schemas import ROI_NAMES, DatasetManifest, VideoEntry

logger = logging.getLogger(__name__)

ONSET_COLUMNS = ["video_id", "onset_sec"]
ROI_COLUMNS = ["video_id", "frame_idx", "roi_name", "cx", "cy", "w", "h", "angle_deg"]
BOX_FIELDS = ["cx", "cy", "w", "h", "angle_deg"]
# CSV のヘッダが 1 行目なので、データ行 i はファイルの i + 2 行目
HEADER_LINES = 2


@dataclass(frozen=True)
class OnsetAnnotations:
    video_id: str
    fps: float
    duration_frames: int
    onsets: np.ndarray

    @property
    def duration_sec(self) -> float:
        return self.duration_frames / self.fps


@dataclass(frozen=True)
class RoiTrack:
    """1 つの ROI のフレームごとの向き付きボックス [F, 5] (cx, cy, w, h, angle_deg)"""

    video_id: str
    roi_name: str
    boxes: np.ndarray


@dataclass(frozen=True)
class VideoRecord:
    subject_id: str
    annotations: OnsetAnnotations
    tracks: Dict[str, RoiTrack]
    frames_dir: Path

    @property
    def video_id(self) -> str:
        return self.annotations.video_id


@dataclass
class OnsetDataset:
    """読み込み済みデータセット (構築後は読み取り専用)"""

    root: Path
    roi_names: List[str]
    videos: Dict[str, VideoRecord]
    subject_videos: Dict[str, List[str]]
    # 参照された被験者の記録 (テスト被験者を学習で読んでいないことの確認用)
    accessed_subjects: Set[str] = field(default_factory=set)

    @property
    def subjects(self) -> List[str]:
        return list(self.subject_videos)

    def videos_of(self, subject: str) -> List[VideoRecord]:
        if subject not in self.subject_videos:
            raise DataError(f"unknown subject {subject!r}")
        self.accessed_subjects.add(subject)
        video_ids = self.subject_videos[subject]
        if not video_ids:
            raise DataError(f"subject {subject!r} has no videos")
        return [self.videos[video_id] for video_id in video_ids]

    def video(self, video_id: str) -> VideoRecord:
        if video_id not in self.videos:
            raise DataError(f"unknown video {video_id!r}")
        record = self.videos[video_id]
        self.accessed_subjects.add(record.subject_id)
        return record


def read_table(path: Path, columns: Sequence[str], dtypes: Dict[str, type]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=dtypes)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if list(frame.columns) != list(columns):
        raise DataError(f"{path}: expected header {','.join(columns)}, got {','.join(map(str, frame.columns))}")
    return frame


def read_onsets(path: Path, entry: VideoEntry) -> OnsetAnnotations:
    """オンセット CSV を読み込み、昇順と範囲を検証する"""
    table = read_table(path, ONSET_COLUMNS, {"video_id": str})
    rows = table[table["video_id"] == entry.video_id]
    onsets = pd.to_numeric(rows["onset_sec"], errors="coerce").to_numpy(dtype=np.float64)
    lines = rows.index.to_numpy() + HEADER_LINES
    duration = entry.duration_frames / entry.fps

    for i, (onset, line) in enumerate(zip(onsets, lines)):
        if not np.isfinite(onset):
            raise DataError(f"{entry.video_id}: {path} line {line}: onset is not a number")
        if onset < 0.0 or onset >= duration:
            raise DataError(
                f"{entry.video_id}: {path} line {line}: onset {onset} outside [0, {duration})"
            )
        if i and onset <= onsets[i - 1]:
            raise DataError(
                f"{entry.video_id}: {path} line {line}: onset {onset} is not after the previous onset {onsets[i - 1]}"
            )
    return OnsetAnnotations(entry.video_id, entry.fps, entry.duration_frames, onsets)


def read_tracks(path: Path, entry: VideoEntry, roi_names: Iterable[str]) -> Dict[str, RoiTrack]:
    """ROI CSV を読み込み、(フレーム, ROI) ごとにちょうど 1 つのボックスがあることを検証する"""
    table = read_table(path, ROI_COLUMNS, {"video_id": str, "roi_name": str})
    rows = table[table["video_id"] == entry.video_id]
    lines = rows.index.to_numpy() + HEADER_LINES

    unknown = ~rows["roi_name"].isin(ROI_NAMES)
    if unknown.any():
        line = lines[np.argmax(unknown.to_numpy())]
        raise DataError(f"{entry.video_id}: {path} line {line}: unknown ROI {rows['roi_name'][unknown].iloc[0]!r}")
    frames = pd.to_numeric(rows["frame_idx"], errors="coerce")
    bad_frame = frames.isna() | (frames < 0) | (frames >= entry.duration_frames) | (frames % 1 != 0)
    if bad_frame.any():
        line = lines[np.argmax(bad_frame.to_numpy())]
        raise DataError(f"{entry.video_id}: {path} line {line}: frame index outside [0, {entry.duration_frames})")
    boxes = rows[BOX_FIELDS].apply(pd.to_numeric, errors="coerce")
    bad_box = boxes.isna().any(axis=1) | (boxes["w"] <= 0) | (boxes["h"] <= 0)
    if bad_box.any():
        line = lines[np.argmax(bad_box.to_numpy())]
        raise DataError(f"{entry.video_id}: {path} line {line}: box must be numeric with w, h > 0")
    duplicated = rows.duplicated(subset=["frame_idx", "roi_name"]).to_numpy()
    if duplicated.any():
        line = lines[np.argmax(duplicated)]
        raise DataError(f"{entry.video_id}: {path} line {line}: duplicate (frame, roi) row")

    tracks = {}
    for roi in roi_names:
        mask = (rows["roi_name"] == roi).to_numpy()
        roi_frames = frames.to_numpy()[mask].astype(np.int64)
        present = np.zeros(entry.duration_frames, dtype=bool)
        present[roi_frames] = True
        if not present.all():
            missing = int(np.argmin(present))
            raise DataError(f"{entry.video_id}: {path}: ROI {roi!r} has no box for frame {missing}")
        track = np.empty((entry.duration_frames, len(BOX_FIELDS)), dtype=np.float64)
        track[roi_frames] = boxes.to_numpy(dtype=np.float64)[mask]
        tracks[roi] = RoiTrack(entry.video_id, roi, track)
    return tracks


def load_annotations(manifest_path, roi_names: Sequence[str] = ROI_NAMES) -> OnsetDataset:
    """マニフェストと参照先の CSV を読み込んで検証する"""
    manifest_path = Path(manifest_path)
    try:
        manifest = DatasetManifest.parse_file(manifest_path)
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except (ValidationError, ValueError) as exc:
        raise DataError(f"invalid manifest {manifest_path}: {exc}") from exc

    unknown = [roi for roi in roi_names if roi not in ROI_NAMES]
    if unknown:
        raise DataError(f"unknown ROI names {unknown}; expected a subset of {list(ROI_NAMES)}")

    root = manifest_path.parent
    videos, subject_videos = {}, {}
    for subject in manifest.subjects:
        subject_videos[subject.id] = []
        for entry in subject.videos:
            frames_dir = root / entry.frames_dir
            if not frames_dir.is_dir():
                raise DataError(f"{entry.video_id}: frames directory {frames_dir} does not exist")
            annotations = read_onsets(root / entry.onsets_csv, entry)
            tracks = read_tracks(root / entry.rois_csv, entry, roi_names)
            videos[entry.video_id] = VideoRecord(subject.id, annotations, tracks, frames_dir)
            subject_videos[subject.id].append(entry.video_id)

    logger.info(
        "loaded %d subjects, %d videos, %d onsets from %s",
        len(subject_videos), len(videos),
        sum(len(v.annotations.onsets) for v in videos.values()), manifest_path,
    )
    return OnsetDataset(root=root, roi_names=list(roi_names), videos=videos, subject_videos=subject_videos)


def dataset_summary(dataset: OnsetDataset) -> Dict[str, float]:
    """被験者数・動画数・オンセット数・オンセット密度"""
    frames = sum(v.annotations.duration_frames for v in dataset.videos.values())
    onsets = sum(len(v.annotations.onsets) for v in dataset.videos.values())
    return {
        "subjects": len(dataset.subject_videos),
        "videos": len(dataset.videos),
        "frames": frames,
        "onsets": onsets,
        "onsets_per_frame": onsets / frames if frames else 0.0,
        "frames_per_onset": frames / onsets if onsets else float("inf"),
    }
