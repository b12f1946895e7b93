"""モデルの評価とレポート出力"""
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from onsetnet.data.annotations import OnsetDataset, VideoRecord, read_table
from onsetnet.data.frames import WindowExtractor
from onsetnet.data.labels import classify_video, target_for, window_refs
from onsetnet.errors import DataError, StorageError
from onsetnet.evaluation.decode import OnsetPrediction, decode_onsets
from onsetnet.evaluation.matching import match_onsets, prf
from onsetnet.network import Model, forward
from onsetnet.nn.losses import weighted_soft_xent_from_probs
from onsetnet.nn.tensor import EVAL, LossSpec
from onsetnet.schemas import DataConfig, EvalConfig, EvalReport, VideoScore

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["method", "video_id", "tp", "fp", "fn", "precision", "recall", "f"]
PREDICTION_COLUMNS = ["video_id", "onset_sec"]
REFERENCE_LABEL = "reference (paper)"
# 50 ms 許容での f 値 (%): 分割 1、分割 2、平均
REFERENCE_ROWS = [
    ("informed random baseline", (27.4, 19.6, 23.5)),
    ("SuperFlux (audio)", (82.8, 81.3, 82.1)),
    ("audio CNN", (94.3, 92.1, 93.2)),
    ("visual CNN", (26.3, 25.0, 25.7)),
]
REFERENCE_COLUMNS = ["split 1", "split 2", "average"]
TOTAL_ROW = "ALL"


def predict_curves(
    model: Model,
    extractor: WindowExtractor,
    records: Iterable[VideoRecord],
    batch_size: int = 64,
) -> Dict[str, np.ndarray]:
    """動画ごとのフレーム単位オンセット確率。端のウィンドウがないフレームは 0"""
    curves = {}
    for record in records:
        duration = record.annotations.duration_frames
        curve = np.zeros(duration, dtype=np.float64)
        refs = list(window_refs(duration))
        chunks = range(0, len(refs), batch_size)
        for start in tqdm(chunks, desc=record.video_id, unit="batch", leave=False, disable=None):
            chunk = refs[start:start + batch_size]
            probs, _ = forward(model, extractor.refs(record.video_id, chunk), EVAL)
            curve[chunk] = probs[:, 1]
        curves[record.video_id] = curve
    clamped = extractor.counter.reset()
    if clamped:
        logger.debug("%d ROI boxes clamped at frame borders during prediction", clamped)
    return curves


def curve_loss(
    curves: Dict[str, np.ndarray],
    records: Iterable[VideoRecord],
    data: DataConfig,
    loss_spec: LossSpec = LossSpec(),
) -> float:
    """確率曲線とウィンドウのターゲットから重み付き交差エントロピーを求める"""
    probs, targets = [], []
    for record in records:
        ann = record.annotations
        curve = curves[record.video_id]
        for ref_frame, label in classify_video(ann.onsets, ann.fps, ann.duration_frames, data.near_radius).items():
            probs.append((1.0 - curve[ref_frame], curve[ref_frame]))
            targets.append(target_for(label, data.near_target))
    if not probs:
        return 0.0
    return weighted_soft_xent_from_probs(np.asarray(probs), np.asarray(targets), loss_spec)


def score_predictions(
    predictions: Dict[str, OnsetPrediction],
    truths: Dict[str, np.ndarray],
    tolerance: float = 0.05,
    averaging: str = "micro",
    method: str = "visual",
    subject: str = "",
) -> EvalReport:
    """動画ごとに照合し、被験者単位で集計する"""
    videos = []
    for video_id, truth in truths.items():
        prediction = predictions.get(video_id, OnsetPrediction(video_id, np.zeros(0)))
        result = match_onsets(prediction.times, truth, tolerance)
        precision, recall, f = prf(result.tp, result.fp, result.fn)
        videos.append(VideoScore(
            video_id=video_id, tp=result.tp, fp=result.fp, fn=result.fn,
            precision=precision, recall=recall, f=f,
        ))
    unknown = sorted(set(predictions) - set(truths))
    if unknown:
        raise DataError(f"predictions for videos without ground truth: {unknown}")

    tp, fp, fn = (sum(getattr(v, name) for v in videos) for name in ("tp", "fp", "fn"))
    if averaging == "macro" and videos:
        precision, recall, f = (float(np.mean([getattr(v, name) for v in videos])) for name in ("precision", "recall", "f"))
    else:
        precision, recall, f = prf(tp, fp, fn)
    return EvalReport(
        method=method, subject=subject, tolerance_sec=tolerance, averaging=averaging, videos=videos,
        tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f=f,
    )


def truths_of(records: Iterable[VideoRecord]) -> Dict[str, np.ndarray]:
    return {record.video_id: record.annotations.onsets for record in records}


def score_curves(
    curves: Dict[str, np.ndarray],
    records: Sequence[VideoRecord],
    config: EvalConfig,
    method: str = "visual",
    subject: str = "",
) -> Tuple[EvalReport, Dict[str, OnsetPrediction]]:
    predictions = {
        record.video_id: decode_onsets(
            curves[record.video_id], record.annotations.fps, config.threshold, config.nms_radius, record.video_id,
        )
        for record in records
    }
    report = score_predictions(predictions, truths_of(records), config.tolerance, config.averaging, method, subject)
    return report, predictions


def evaluate_model(
    model: Model,
    dataset: OnsetDataset,
    subject: str,
    config: EvalConfig,
    data: DataConfig = DataConfig(),
    extractor: Optional[WindowExtractor] = None,
    loss_spec: LossSpec = LossSpec(),
    method: str = "visual",
) -> Tuple[EvalReport, Dict[str, OnsetPrediction]]:
    """被験者の全動画を評価モードで推論し、復号・照合・集計する"""
    records = dataset.videos_of(subject)
    if extractor is None:
        extractor = WindowExtractor(
            dataset, model.config.roi_names, model.config.roi_pixels, model.config.channels_in,
            margin=data.crop_margin, cache_size=data.frame_cache,
        )
    curves = predict_curves(model, extractor, records, config.batch_size)
    report, predictions = score_curves(curves, records, config, method, subject)
    report.loss = curve_loss(curves, records, data, loss_spec)
    logger.info(
        "%s on %s: P %.3f R %.3f F %.3f (tp %d fp %d fn %d, loss %.4f)",
        method, subject, report.precision, report.recall, report.f, report.tp, report.fp, report.fn, report.loss,
    )
    return report, predictions


def _percent(value: float) -> str:
    return f"{100.0 * value:.1f}"


def report_table(reports: Sequence[EvalReport], include_reference: bool = False) -> pd.DataFrame:
    """レポートの行を文字列の表にする (テキストと CSV で同じ値を使う)

    include_reference のときは split 1 / split 2 / average の列を足し、参照値を手法ごとに 1 行で並べる。
    """
    rows = []
    for report in reports:
        for video in report.videos:
            rows.append([report.method, video.video_id, video.tp, video.fp, video.fn,
                         _percent(video.precision), _percent(video.recall), _percent(video.f)])
        rows.append([report.method, f"{TOTAL_ROW} ({report.subject})" if report.subject else TOTAL_ROW,
                     report.tp, report.fp, report.fn,
                     _percent(report.precision), _percent(report.recall), _percent(report.f)])
    columns = list(REPORT_COLUMNS)
    if include_reference:
        columns += REFERENCE_COLUMNS
        rows = [row + [""] * len(REFERENCE_COLUMNS) for row in rows]
        for method, values in REFERENCE_ROWS:
            blank = [""] * (len(REPORT_COLUMNS) - 1)
            rows.append([f"{method} [{REFERENCE_LABEL}]"] + blank + [f"{value:.1f}" for value in values])
    return pd.DataFrame([[str(cell) for cell in row] for row in rows], columns=columns)


def render_report(reports: Sequence[EvalReport], include_reference: bool = False) -> Tuple[str, str]:
    """(テキストの表, CSV) を返す。f などは百分率で小数 1 桁"""
    table = report_table(reports, include_reference)
    csv = table.to_csv(index=False)
    if table.empty:
        return "  ".join(REPORT_COLUMNS), csv
    return table.to_string(index=False), csv


def write_predictions(path, predictions: Dict[str, OnsetPrediction]) -> Path:
    path = Path(path)
    rows = [(video_id, t) for video_id, prediction in predictions.items() for t in prediction.times]
    table = pd.DataFrame(rows, columns=PREDICTION_COLUMNS)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(path, index=False, float_format="%.6f")
    except OSError as exc:
        raise StorageError(f"cannot write predictions {path}: {exc}") from exc
    return path


def read_predictions(path) -> Dict[str, OnsetPrediction]:
    """video_id,onset_sec の CSV を読み込む (動画ごとに昇順であること)"""
    table = read_table(Path(path), PREDICTION_COLUMNS, {"video_id": str})
    times = pd.to_numeric(table["onset_sec"], errors="coerce")
    if times.isna().any():
        line = int(np.argmax(times.isna().to_numpy())) + 2
        raise DataError(f"{path} line {line}: onset is not a number")
    predictions = {}
    for video_id, group in table.assign(onset_sec=times).groupby("video_id", sort=False):
        values = group["onset_sec"].to_numpy(dtype=np.float64)
        if np.any(np.diff(values) <= 0):
            raise DataError(f"{path}: onsets for {video_id} are not strictly increasing")
        predictions[video_id] = OnsetPrediction(video_id, values)
    return predictions

