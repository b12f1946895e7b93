from pathlib import Path

from onsetnet.checkpoint import load_checkpoint
from onsetnet.data.frames import WindowExtractor
from onsetnet.data.splits import make_splits
from onsetnet.deps import load_dataset, output_dir, require_data, require_subject, write_run_manifest
from onsetnet.errors import ConfigError, StorageError
from onsetnet.evaluation.report import (
    evaluate_model,
    read_predictions,
    render_report,
    score_predictions,
    truths_of,
    write_predictions,
)
from onsetnet.nn.tensor import LossSpec

REPORT_NAME = "report.csv"
PREDICTIONS_NAME = "predictions.csv"


def register(subparsers):
    parser = subparsers.add_parser("eval", help="チェックポイントまたは予測 CSV を評価する")
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--checkpoint", help="評価するチェックポイント (eval.checkpoint)")
    source.add_argument("--predictions", help="video_id,onset_sec 形式の外部予測 (eval.predictions)")
    parser.add_argument("--subject", help="評価する被験者 (省略時はチェックポイントの分割のテスト被験者)")
    parser.add_argument("--reference", action="store_true", help="公表済みの参照値の行を加える")
    parser.add_argument("--tolerance", type=float, help="eval.tolerance (秒)")
    parser.add_argument("--threshold", type=float, help="eval.threshold")
    parser.add_argument("--nms-radius", type=int, help="eval.nms_radius (フレーム)")
    parser.add_argument("--macro", action="store_true", help="動画ごとの値の平均で集計する")
    parser.set_defaults(handler=run, overrides=overrides)


def overrides(args):
    values = {
        "eval.subject": args.subject,
        "eval.tolerance": args.tolerance,
        "eval.threshold": args.threshold,
        "eval.nms_radius": args.nms_radius,
        "eval.averaging": "macro" if args.macro else None,
        "eval.include_reference": True if args.reference else None,
    }
    # 入力はどちらか一方 (設定ファイル側の指定はフラグで置き換える)
    if args.checkpoint is not None:
        values.update({"eval.checkpoint": args.checkpoint, "eval.predictions": "none"})
    if args.predictions is not None:
        values.update({"eval.predictions": args.predictions, "eval.checkpoint": "none"})
    return values


def _default_subject(dataset, metadata) -> str:
    split_id = metadata.get("split_id")
    if split_id is None:
        raise ConfigError("--subject is required when the checkpoint does not name its split")
    return make_splits(dataset.subjects)[int(split_id)].test_subject


def run(args, config, env) -> int:
    settings = config.eval
    reports = []
    if settings.checkpoint:
        checkpoint = Path(settings.checkpoint)
        dataset = load_dataset(config)
        model, metadata = load_checkpoint(checkpoint)
        subject = require_subject(dataset, settings.subject or _default_subject(dataset, metadata))
        out_dir = output_dir(config, f"eval_{subject}")
        write_run_manifest(out_dir, "eval", config, {"dataset": require_data(config), "checkpoint": checkpoint})
        extractor = WindowExtractor(
            dataset, model.config.roi_names, model.config.roi_pixels, model.config.channels_in,
            margin=config.data.crop_margin, threads=env.threads, cache_size=config.data.frame_cache,
        )
        report, predictions = evaluate_model(
            model, dataset, subject, settings, config.data, extractor, LossSpec(tuple(config.train.class_weights)),
        )
        write_predictions(out_dir / PREDICTIONS_NAME, predictions)
        reports.append(report)
    elif settings.predictions:
        if not settings.subject:
            raise ConfigError("--subject is required with --predictions")
        predictions_path = Path(settings.predictions)
        dataset = load_dataset(config)
        subject = require_subject(dataset, settings.subject)
        out_dir = output_dir(config, f"eval_{subject}")
        write_run_manifest(out_dir, "eval", config, {"dataset": require_data(config), "predictions": predictions_path})
        truths = truths_of(dataset.videos_of(subject))
        predictions = {
            video_id: prediction
            for video_id, prediction in read_predictions(predictions_path).items()
            if dataset.video(video_id).subject_id == subject
        }
        reports.append(score_predictions(
            predictions, truths, settings.tolerance, settings.averaging, method="external", subject=subject,
        ))
    elif settings.include_reference:
        out_dir = output_dir(config, "eval_reference")
        write_run_manifest(out_dir, "eval", config)
    else:
        raise ConfigError("eval needs --checkpoint, --predictions or --reference")

    text, csv = render_report(reports, settings.include_reference)
    print(text)
    path = out_dir / REPORT_NAME
    try:
        path.write_text(csv, encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write report {path}: {exc}") from exc
    return 0
