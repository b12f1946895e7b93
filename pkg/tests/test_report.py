import io

import numpy as np
import pandas as pd
import pytest

from onsetnet.errors import DataError
from onsetnet.evaluation.decode import OnsetPrediction
from onsetnet.evaluation.report import (
    REFERENCE_COLUMNS,
    REFERENCE_LABEL,
    REPORT_COLUMNS,
    evaluate_model,
    read_predictions,
    render_report,
    score_curves,
    score_predictions,
    write_predictions,
)
from onsetnet.network import build_model
from onsetnet.schemas import EvalConfig
from tests.conftest import tiny_model_config


def oracle_curves(records):
    """正解オンセットのフレームだけ 1 の確率曲線"""
    curves = {}
    for record in records:
        ann = record.annotations
        curve = np.zeros(ann.duration_frames)
        curve[np.floor(ann.onsets * ann.fps).astype(int)] = 1.0
        curves[record.video_id] = curve
    return curves


def test_oracle_curves_score_perfectly(dataset):
    records = dataset.videos_of("s00")
    report, predictions = score_curves(oracle_curves(records), records, EvalConfig(), subject="s00")
    assert report.f == 1.0
    assert report.fp == 0 and report.fn == 0
    assert set(predictions) == {record.video_id for record in records}


def test_flat_curves_find_nothing(dataset):
    records = dataset.videos_of("s01")
    curves = {record.video_id: np.full(record.annotations.duration_frames, 0.3) for record in records}
    report, _ = score_curves(curves, records, EvalConfig())
    assert report.recall == 0.0
    assert report.tp == 0
    assert report.fn == sum(len(record.annotations.onsets) for record in records)


def test_evaluate_model_counts_every_truth(dataset):
    model = build_model(tiny_model_config(), np.random.default_rng(0))
    config = EvalConfig(batch_size=32)
    report, _ = evaluate_model(model, dataset, "s03", config)
    truths = sum(len(record.annotations.onsets) for record in dataset.videos_of("s03"))
    assert report.tp + report.fn == truths
    assert np.isfinite(report.loss)
    again, _ = evaluate_model(model, dataset, "s03", config)
    assert again.dict() == report.dict()


class TestScorePredictions:
    truths = {"a": np.array([1.0, 2.0]), "b": np.array([1.0, 2.0, 3.0, 4.0])}

    def test_micro_and_macro(self):
        predictions = {
            "a": OnsetPrediction("a", np.array([1.0, 2.0])),
            "b": OnsetPrediction("b", np.array([1.0])),
        }
        micro = score_predictions(predictions, self.truths)
        assert (micro.tp, micro.fp, micro.fn) == (3, 0, 3)
        assert micro.recall == pytest.approx(0.5)
        macro = score_predictions(predictions, self.truths, averaging="macro")
        assert macro.recall == pytest.approx((1.0 + 0.25) / 2)

    def test_missing_video_counts_as_silent(self):
        report = score_predictions({}, self.truths)
        assert report.fn == 6 and report.f == 0.0

    def test_unknown_video(self):
        with pytest.raises(DataError, match="without ground truth"):
            score_predictions({"zz": OnsetPrediction("zz", np.array([1.0]))}, self.truths)


class TestRender:
    def report(self):
        predictions = {"a": OnsetPrediction("a", np.array([1.0, 1.5]))}
        return score_predictions(predictions, {"a": np.array([1.0, 3.0])}, subject="s04")

    def test_empty_is_header_only(self):
        text, csv = render_report([])
        assert text == "  ".join(REPORT_COLUMNS)
        assert csv.strip() == ",".join(REPORT_COLUMNS)

    def test_text_and_csv_agree(self):
        text, csv = render_report([self.report()])
        table = pd.read_csv(io.StringIO(csv), dtype=str)
        assert table["video_id"].tolist() == ["a", "ALL (s04)"]
        assert table["f"].tolist() == ["50.0", "50.0"]
        for value in table.to_numpy().ravel():
            assert value in text

    def test_reference_rows(self):
        text, csv = render_report([self.report()], include_reference=True)
        table = pd.read_csv(io.StringIO(csv), dtype=str, keep_default_na=False)
        reference = table[table["method"].str.contains(REFERENCE_LABEL, regex=False)]
        assert list(table.columns) == REPORT_COLUMNS + REFERENCE_COLUMNS
        assert len(reference) == 4
        row = reference[reference["method"] == f"visual CNN [{REFERENCE_LABEL}]"]
        assert row[REFERENCE_COLUMNS].to_numpy().tolist() == [["26.3", "25.0", "25.7"]]
        assert row["f"].tolist() == [""]
        measured = table[~table.index.isin(reference.index)]
        assert (measured[REFERENCE_COLUMNS] == "").all().all()
        assert "82.8" in text

    def test_reference_columns_only_on_request(self):
        _, csv = render_report([self.report()])
        assert list(pd.read_csv(io.StringIO(csv)).columns) == REPORT_COLUMNS


class TestPredictionFiles:
    def test_round_trip(self, tmp_path):
        predictions = {
            "s00_v00": OnsetPrediction("s00_v00", np.array([0.5, 1.25])),
            "s00_v01": OnsetPrediction("s00_v01", np.array([2.0])),
        }
        loaded = read_predictions(write_predictions(tmp_path / "p.csv", predictions))
        assert set(loaded) == set(predictions)
        np.testing.assert_allclose(loaded["s00_v00"].times, [0.5, 1.25])

    def test_unsorted_rejected(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("video_id,onset_sec\nv,1.0\nv,0.5\n", encoding="utf-8")
        with pytest.raises(DataError, match="increasing"):
            read_predictions(path)

    def test_bad_number(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("video_id,onset_sec\nv,1.0\nv,abc\n", encoding="utf-8")
        with pytest.raises(DataError, match="line 3"):
            read_predictions(path)
