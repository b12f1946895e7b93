from datetime import datetime
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, root_validator, validator

ROI_NAMES = ("mouth", "left_hand", "right_hand", "clarinet_tip")
INIT_SCHEMES = ("he_normal", "glorot_uniform")
DTYPES = ("float32", "float64")
AVERAGING = ("micro", "macro")
LOSO_SUBJECTS = 9

# 参照フレームの前 5 フレーム、参照フレーム、後 3 フレーム
FRAMES_BEFORE = 5
FRAMES_AFTER = 3
WINDOW_FRAMES = FRAMES_BEFORE + 1 + FRAMES_AFTER


class Section(BaseModel):
    """設定セクションの基底クラス (未知のキーは拒否)"""

    class Config:
        extra = "forbid"


def _positive(name: str, values) -> None:
    if any(v < 1 for v in values):
        raise ValueError(f"{name} must be >= 1, got {values}")


# モデル関連のスキーマ
class ModelConfig(Section):
    roi_names: List[str] = list(ROI_NAMES)
    input_frames: int = WINDOW_FRAMES
    roi_pixels: Tuple[int, int] = (64, 64)
    channels_in: int = 3
    conv_channels: Tuple[int, int, int, int, int] = (16, 32, 32, 64, 64)
    temporal_kernels: Tuple[int, int, int, int, int] = (3, 3, 3, 3, 1)
    spatial_kernels: Tuple[int, int, int, int, int] = (3, 3, 3, 3, 3)
    pool_after: List[int] = [1, 2, 3]
    fc1_width: int = 128
    fc2_width: int = 256
    dropout_rate: float = 0.5
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.9
    init: str = "he_normal"
    dtype: str = "float32"

    @validator("roi_names")
    def check_roi_names(cls, v):
        if not v:
            raise ValueError("at least one ROI stream is required")
        if len(set(v)) != len(v):
            raise ValueError(f"ROI names must be unique, got {v}")
        return v

    @validator("input_frames", "channels_in", "fc1_width", "fc2_width")
    def check_counts(cls, v, field):
        _positive(field.name, [v])
        return v

    @validator("roi_pixels", "conv_channels", "temporal_kernels")
    def check_extents(cls, v, field):
        _positive(field.name, v)
        return v

    @validator("spatial_kernels")
    def check_spatial_kernels(cls, v):
        _positive("spatial_kernels", v)
        # 奇数カーネルと (k-1)/2 のパディングで空間サイズを保つ
        if any(k % 2 == 0 for k in v):
            raise ValueError(f"spatial kernels must be odd, got {v}")
        return v

    @validator("pool_after")
    def check_pool_after(cls, v):
        if len(set(v)) != len(v) or any(i < 1 or i > 5 for i in v):
            raise ValueError(f"pool_after must hold distinct layer indices in 1..5, got {v}")
        return sorted(v)

    @validator("dropout_rate")
    def check_dropout(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {v}")
        return v

    @validator("bn_momentum")
    def check_momentum(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError(f"bn_momentum must be in (0, 1), got {v}")
        return v

    @validator("bn_epsilon")
    def check_epsilon(cls, v):
        if v <= 0.0:
            raise ValueError(f"bn_epsilon must be positive, got {v}")
        return v

    @validator("init")
    def check_init(cls, v):
        if v not in INIT_SCHEMES:
            raise ValueError(f"init must be one of {INIT_SCHEMES}, got {v!r}")
        return v

    @validator("dtype")
    def check_dtype(cls, v):
        if v not in DTYPES:
            raise ValueError(f"dtype must be one of {DTYPES}, got {v!r}")
        return v

    @root_validator(skip_on_failure=True)
    def check_pooling(cls, values):
        height, width = values["roi_pixels"]
        factor = 2 ** len(values["pool_after"])
        if height % factor or width % factor:
            raise ValueError(
                f"roi_pixels {values['roi_pixels']} must be divisible by {factor} for pooling after {values['pool_after']}"
            )
        return values

    def temporal_extents(self) -> List[int]:
        """入力と CONV1-5 の各出力の時間方向の長さ"""
        extents = [self.input_frames]
        for kt in self.temporal_kernels:
            extents.append(extents[-1] - kt + 1)
        return extents

    def spatial_extents(self) -> Tuple[int, int]:
        """CONV5 出力の空間サイズ"""
        factor = 2 ** len(self.pool_after)
        return self.roi_pixels[0] // factor, self.roi_pixels[1] // factor


# データ関連のスキーマ
class DataConfig(Section):
    near_radius: int = 1
    near_target: float = 0.75
    crop_margin: int = 8
    max_jitter: int = 4
    da_factor: int = 4
    frame_cache: int = 512

    @validator("near_radius", "da_factor")
    def check_counts(cls, v, field):
        _positive(field.name, [v])
        return v

    @validator("near_target")
    def check_near_target(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError(f"near_target must be in (0, 1), got {v}")
        return v

    @validator("crop_margin", "max_jitter", "frame_cache")
    def check_non_negative(cls, v, field):
        if v < 0:
            raise ValueError(f"{field.name} must be >= 0, got {v}")
        return v

    @root_validator(skip_on_failure=True)
    def check_jitter(cls, values):
        if 2 * values["max_jitter"] > values["crop_margin"]:
            raise ValueError(
                f"max_jitter {values['max_jitter']} exceeds half the crop margin {values['crop_margin']}"
            )
        return values


# 学習関連のスキーマ
class TrainConfig(Section):
    max_epochs: int = 15
    l2_lambda: float = 1e-4
    class_weights: Tuple[float, float] = (1.0, 1.0)
    base_lr: float = 1e-3
    lr_decay: float = 0.95
    rho: float = 0.9
    epsilon: float = 1e-8
    grad_clip: Optional[float] = None
    max_batches_per_epoch: Optional[int] = None
    checkpoint_dir: Optional[str] = None
    # LOSO の分割番号 (train --split)
    split: int = 0

    @validator("max_epochs")
    def check_epochs(cls, v):
        _positive("max_epochs", [v])
        return v

    @validator("l2_lambda", "base_lr")
    def check_non_negative(cls, v, field):
        if v < 0:
            raise ValueError(f"{field.name} must be >= 0, got {v}")
        return v

    @validator("class_weights")
    def check_weights(cls, v):
        if any(w <= 0 for w in v):
            raise ValueError(f"class_weights must be positive, got {v}")
        return v

    @validator("lr_decay")
    def check_decay(cls, v):
        if not 0.0 < v <= 1.0:
            raise ValueError(f"lr_decay must be in (0, 1], got {v}")
        return v

    @validator("rho")
    def check_rho(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError(f"rho must be in [0, 1), got {v}")
        return v

    @validator("epsilon", "grad_clip")
    def check_positive(cls, v, field):
        if v is not None and v <= 0:
            raise ValueError(f"{field.name} must be positive, got {v}")
        return v

    @validator("max_batches_per_epoch")
    def check_batch_cap(cls, v):
        if v is not None:
            _positive("max_batches_per_epoch", [v])
        return v

    @validator("split")
    def check_split(cls, v):
        if not 0 <= v < LOSO_SUBJECTS:
            raise ValueError(f"split must be in 0..{LOSO_SUBJECTS - 1}, got {v}")
        return v


# 評価関連のスキーマ
class EvalConfig(Section):
    threshold: float = 0.5
    nms_radius: int = 2
    tolerance: float = 0.05
    averaging: str = "micro"
    baseline_trials: int = 1000
    batch_size: int = 64
    # eval / baseline コマンドの入力 (フラグで上書きされ、実行マニフェストに残る)
    checkpoint: Optional[str] = None
    predictions: Optional[str] = None
    subject: Optional[str] = None
    include_reference: bool = False
    baseline_spread: int = 0

    @validator("threshold")
    def check_threshold(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {v}")
        return v

    @validator("nms_radius")
    def check_radius(cls, v):
        if v < 0:
            raise ValueError(f"nms_radius must be >= 0, got {v}")
        return v

    @validator("tolerance")
    def check_tolerance(cls, v):
        if v <= 0:
            raise ValueError(f"tolerance must be positive, got {v}")
        return v

    @validator("averaging")
    def check_averaging(cls, v):
        if v not in AVERAGING:
            raise ValueError(f"averaging must be one of {AVERAGING}, got {v!r}")
        return v

    @validator("baseline_trials", "batch_size")
    def check_counts(cls, v, field):
        _positive(field.name, [v])
        return v

    @validator("baseline_spread")
    def check_spread(cls, v):
        if v < 0:
            raise ValueError(f"baseline_spread must be >= 0, got {v}")
        return v

    @root_validator(skip_on_failure=True)
    def check_source(cls, values):
        if values["checkpoint"] and values["predictions"]:
            raise ValueError("eval.checkpoint and eval.predictions are mutually exclusive")
        return values


# 合成データ関連のスキーマ
class SynthConfig(Section):
    subjects: int = 9
    videos_per_subject: int = 2
    fps: float = 30.0
    duration_sec: float = 30.0
    frame_width: int = 160
    frame_height: int = 120
    roi_size: int = 40
    mean_gap_frames: float = 15.0
    min_gap_frames: int = 4
    cue_rois: List[str] = ["mouth", "clarinet_tip"]
    noise: float = 0.03

    @validator("subjects", "videos_per_subject", "frame_width", "frame_height", "roi_size", "min_gap_frames")
    def check_counts(cls, v, field):
        _positive(field.name, [v])
        return v

    @validator("fps", "duration_sec")
    def check_positive(cls, v, field):
        if v <= 0:
            raise ValueError(f"{field.name} must be positive, got {v}")
        return v

    @validator("cue_rois")
    def check_cue_rois(cls, v):
        unknown = [name for name in v if name not in ROI_NAMES]
        if unknown:
            raise ValueError(f"unknown cue ROIs {unknown}")
        return v

    @root_validator(skip_on_failure=True)
    def check_gaps(cls, values):
        if values["mean_gap_frames"] < values["min_gap_frames"]:
            raise ValueError("mean_gap_frames must be >= min_gap_frames")
        return values


class PathsConfig(Section):
    data: Optional[str] = None
    out: str = "runs"


class RunConfig(Section):
    seed: int = 0
    paths: PathsConfig = PathsConfig()
    model: ModelConfig = ModelConfig()
    data: DataConfig = DataConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    synth: SynthConfig = SynthConfig()

    @validator("seed")
    def check_seed(cls, v):
        if not 0 <= v < 2 ** 64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {v}")
        return v

    @root_validator(skip_on_failure=True)
    def check_window(cls, values):
        model = values["model"]
        if model.input_frames != WINDOW_FRAMES:
            raise ValueError(f"model.input_frames must equal the window length {WINDOW_FRAMES}")
        return values


# データセットのマニフェスト
class VideoEntry(BaseModel):
    video_id: str
    fps: float
    duration_frames: int
    frames_dir: str
    onsets_csv: str
    rois_csv: str

    @validator("fps")
    def check_fps(cls, v):
        if v <= 0:
            raise ValueError(f"fps must be positive, got {v}")
        return v

    @validator("duration_frames")
    def check_duration(cls, v):
        _positive("duration_frames", [v])
        return v


class SubjectEntry(BaseModel):
    id: str
    videos: List[VideoEntry]


class DatasetManifest(BaseModel):
    subjects: List[SubjectEntry]

    @validator("subjects")
    def check_unique(cls, v):
        ids = [s.id for s in v]
        if len(set(ids)) != len(ids):
            raise ValueError(f"subject ids must be unique, got {ids}")
        videos = [video.video_id for s in v for video in s.videos]
        if len(set(videos)) != len(videos):
            raise ValueError("video ids must be unique across subjects")
        return v


# LOSO 分割
class SplitPlan(BaseModel):
    split_id: int
    train_subjects: List[str]
    validation_subject: str
    test_subject: str


# 学習履歴
class HistoryRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    val_precision: float
    val_recall: float
    val_f: float


# 実行マニフェスト
class RunManifest(BaseModel):
    command: str
    tool_version: str
    seed: int
    config: Dict[str, str]
    inputs: Dict[str, str] = {}
    created_at: datetime


# 評価結果
class VideoScore(BaseModel):
    video_id: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f: float


class EvalReport(BaseModel):
    method: str
    subject: str
    tolerance_sec: float
    averaging: str = "micro"
    videos: List[VideoScore] = []
    tp: int = 0
    fp: int = 0
    fn: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f: float = 0.0
    loss: Optional[float] = None
