import json
import struct
import zlib

import numpy as np
import pandas as pd
import pytest

from onsetnet import __version__
from onsetnet.checkpoint import save_checkpoint
from onsetnet.data.splits import make_splits
from onsetnet.data.synth import MANIFEST_NAME
from onsetnet.deps import RUN_MANIFEST_NAME
from onsetnet.main import main
from onsetnet.network import build_model
from tests.conftest import tiny_model_config


def run_cli(capsys, *args):
    code = main([str(arg) for arg in args])
    out, err = capsys.readouterr()
    return code, out, err


def test_help_lists_config_keys(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    assert "model.fc1_width = 128" in out
    assert "eval.tolerance = 0.05" in out
    assert "exit codes" in out


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert __version__ in capsys.readouterr().out


def test_gradcheck(capsys):
    code, out, _ = run_cli(capsys, "gradcheck", "--scope", "ops")
    assert code == 0
    assert "conv3d" in out and "FAIL" not in out


def test_gradcheck_reports_a_broken_backward(capsys):
    code, out, err = run_cli(capsys, "gradcheck", "--scope", "ops", "--corrupt", "conv3d")
    assert code == 4
    assert "FAIL" in out
    assert "conv3d" in err


def test_synth_then_splits(capsys, config_file, tmp_path):
    out_dir = tmp_path / "data"
    code, out, _ = run_cli(capsys, "--config", config_file, "--seed", 3, "--out", out_dir, "synth")
    assert code == 0
    manifest = out_dir / MANIFEST_NAME
    assert manifest.is_file()
    assert "subjects 9, videos 9" in out

    code, out, _ = run_cli(capsys, "--config", config_file, "--data", manifest, "splits")
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 9
    assert lines[0].startswith("split 0: test s00")


def test_missing_manifest(capsys, tmp_path):
    code, _, err = run_cli(capsys, "--data", tmp_path / "missing.json", "--out", tmp_path, "train")
    assert code == 2
    assert "error: dataset manifest not found" in err


def test_unknown_config_key(capsys, synth_manifest, tmp_path):
    code, _, err = run_cli(capsys, "--set", "train.speed=3", "--data", synth_manifest, "splits")
    assert code == 2
    assert "train.speed" in err


def test_train_then_eval(capsys, config_file, synth_manifest, dataset, tmp_path):
    common = ["--config", config_file, "--data", synth_manifest, "--out", tmp_path]
    code, out, _ = run_cli(capsys, *common, "train", "--max-epochs", 1)
    assert code == 0
    split_dir = tmp_path / "split_0"
    for name in ("epoch_000.ckpt", "best.ckpt", "history.csv", "run_manifest.json"):
        assert (split_dir / name).is_file()
    assert "best epoch 0" in out

    code, out, _ = run_cli(capsys, *common, "eval", "--checkpoint", split_dir / "best.ckpt")
    assert code == 0
    subject = make_splits(dataset.subjects)[0].test_subject
    report = pd.read_csv(tmp_path / f"eval_{subject}" / "report.csv", dtype=str)
    assert report["video_id"].iloc[-1] == f"ALL ({subject})"
    assert (tmp_path / f"eval_{subject}" / "predictions.csv").is_file()


def test_train_manifest_replays_the_split(capsys, config_file, synth_manifest, tmp_path):
    code, _, _ = run_cli(
        capsys, "--config", config_file, "--data", synth_manifest, "--out", tmp_path / "first",
        "train", "--split", 3, "--max-epochs", 1,
    )
    assert code == 0
    manifest = tmp_path / "first" / "split_3" / RUN_MANIFEST_NAME
    assert json.loads(manifest.read_text(encoding="utf-8"))["config"]["train.split"] == "3"

    code, _, _ = run_cli(capsys, "--config", manifest, "--out", tmp_path / "replay", "train")
    assert code == 0
    assert not (tmp_path / "replay" / "split_0").exists()
    first, replay = (tmp_path / run / "split_3" / "history.csv" for run in ("first", "replay"))
    assert replay.read_bytes() == first.read_bytes()


def test_train_rejects_unknown_split(capsys, synth_manifest, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["--data", str(synth_manifest), "--out", str(tmp_path), "train", "--split", "9"])
    assert info.value.code == 2
    assert "--split" in capsys.readouterr().err


def test_eval_manifest_replays_checkpoint_and_subject(capsys, config_file, synth_manifest, tmp_path):
    common = ["--config", config_file, "--data", synth_manifest]
    code, _, _ = run_cli(capsys, *common, "--out", tmp_path, "train", "--max-epochs", 1)
    assert code == 0
    checkpoint = tmp_path / "split_0" / "best.ckpt"
    code, _, _ = run_cli(
        capsys, *common, "--out", tmp_path / "first", "eval", "--checkpoint", checkpoint, "--subject", "s05",
    )
    assert code == 0
    manifest = tmp_path / "first" / "eval_s05" / RUN_MANIFEST_NAME
    stored = json.loads(manifest.read_text(encoding="utf-8"))["config"]
    assert stored["eval.checkpoint"] == str(checkpoint)
    assert stored["eval.subject"] == "s05"

    code, _, _ = run_cli(capsys, "--config", manifest, "--out", tmp_path / "replay", "eval")
    assert code == 0
    first, replay = (tmp_path / run / "eval_s05" / "report.csv" for run in ("first", "replay"))
    assert replay.read_text(encoding="utf-8") == first.read_text(encoding="utf-8")


def test_eval_rejects_newer_checkpoint(capsys, config_file, synth_manifest, tmp_path):
    path = save_checkpoint(build_model(tiny_model_config(), np.random.default_rng(0)), tmp_path / "m.ckpt", {})
    data = path.read_bytes()
    body = data[:4] + struct.pack("<I", 2) + data[8:-4]
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    code, _, err = run_cli(
        capsys, "--config", config_file, "--data", synth_manifest, "--out", tmp_path,
        "eval", "--checkpoint", path, "--subject", "s00",
    )
    assert code == 6
    assert "version 2" in err


def test_eval_ground_truth_predictions(capsys, config_file, synth_manifest, dataset, tmp_path):
    rows = [(record.video_id, t) for record in dataset.videos_of("s01") for t in record.annotations.onsets]
    predictions = tmp_path / "truth.csv"
    pd.DataFrame(rows, columns=["video_id", "onset_sec"]).to_csv(predictions, index=False)
    code, out, _ = run_cli(
        capsys, "--config", config_file, "--data", synth_manifest, "--out", tmp_path,
        "eval", "--predictions", predictions, "--subject", "s01",
    )
    assert code == 0
    assert "ALL (s01)" in out
    assert "100.0" in out
    report = pd.read_csv(tmp_path / "eval_s01" / "report.csv", dtype=str)
    assert report["f"].iloc[-1] == "100.0"


def test_eval_predictions_need_a_subject(capsys, synth_manifest, tmp_path):
    code, _, err = run_cli(capsys, "--data", synth_manifest, "--out", tmp_path, "eval", "--predictions", "p.csv")
    assert code == 2
    assert "--subject" in err


def test_eval_reference_only(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "--out", tmp_path, "eval", "--reference")
    assert code == 0
    assert "reference (paper)" in out
    assert (tmp_path / "eval_reference" / "report.csv").is_file()


def test_eval_without_source(capsys, tmp_path):
    code, _, err = run_cli(capsys, "--out", tmp_path, "eval")
    assert code == 2
    assert "--checkpoint" in err


def test_baseline(capsys, config_file, synth_manifest, tmp_path):
    code, out, _ = run_cli(
        capsys, "--config", config_file, "--data", synth_manifest, "--out", tmp_path,
        "baseline", "--subject", "s02", "--trials", 5, "--spread", 3,
    )
    assert code == 0
    assert "mean f over 1 videos (5 trials)" in out
    assert "spread over 3 seeds" in out
    table = pd.read_csv(tmp_path / "baseline" / "baseline.csv")
    assert table["video_id"].tolist() == ["s02_v00"]
    assert 0.0 <= table["f"].iloc[0] <= 1.0
