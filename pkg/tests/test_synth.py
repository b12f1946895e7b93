import numpy as np
import pytest
from PIL import Image

from onsetnet.data.frames import FRAME_PATTERN
from onsetnet.data.synth import EDGE_FRAMES, MAX_ANGLE, box_corners, generate_synthetic, onset_schedule, roi_tracks
from onsetnet.errors import StorageError
from onsetnet.schemas import SynthConfig
from tests.conftest import tiny_synth_config


def tree_bytes(root):
    return {path.relative_to(root).as_posix(): path.read_bytes() for path in sorted(root.rglob("*")) if path.is_file()}


def test_same_seed_same_files(tmp_path):
    spec = tiny_synth_config(subjects=2, duration_sec=1.0)
    first = generate_synthetic(spec, 9, tmp_path / "a")
    second = generate_synthetic(spec, 9, tmp_path / "b")
    a, b = tree_bytes(first.parent), tree_bytes(second.parent)
    assert set(a) == set(b)
    assert a == b
    assert "s00/s00_v00/frames/000000.png" in a


def test_different_seed_different_onsets(tmp_path):
    spec = tiny_synth_config(subjects=1, duration_sec=2.0)
    a = generate_synthetic(spec, 1, tmp_path / "a").parent / "s00" / "s00_v00" / "onsets.csv"
    b = generate_synthetic(spec, 2, tmp_path / "b").parent / "s00" / "s00_v00" / "onsets.csv"
    assert a.read_bytes() != b.read_bytes()


def test_one_onset_every_fifteen_frames():
    spec = SynthConfig(subjects=9, videos_per_subject=2, duration_sec=30.0, fps=30.0)
    total = 0
    for video in range(18):
        frames, times = onset_schedule(np.random.default_rng(video), spec, 900)
        total += len(frames)
        assert np.all(np.diff(frames) >= spec.min_gap_frames)
        assert frames.min() >= EDGE_FRAMES and frames.max() < 900 - EDGE_FRAMES
        np.testing.assert_array_equal(np.floor(times * spec.fps), frames)
    assert 0.9 * 18 * 60 <= total <= 1.1 * 18 * 60


def test_tracks_drift_and_rotate(rng):
    spec = SynthConfig()
    tracks = roi_tracks(rng, spec, 300)
    for boxes in tracks.values():
        assert boxes.shape == (300, 5)
        assert np.all(np.abs(boxes[:, 4]) <= MAX_ANGLE)
        assert np.all(np.abs(np.diff(boxes[:, 0])) < 1.0)


def test_box_corners_unrotated():
    corners = box_corners((10.0, 20.0, 4.0, 2.0, 0.0))
    np.testing.assert_allclose(corners, [(8, 19), (12, 19), (12, 21), (8, 21)])


def test_cue_brightens_mouth_at_onsets(dataset):
    record = dataset.video("s02_v00")
    boxes = record.tracks["mouth"].boxes
    frames = np.floor(record.annotations.onsets * record.annotations.fps).astype(int)
    for k in frames:
        cue, quiet = (
            np.asarray(Image.open(record.frames_dir / FRAME_PATTERN.format(f)).convert("L"), dtype=float)
            for f in (k, k - 2)
        )
        row, col = int(boxes[k, 1]), int(boxes[k, 0])
        qrow, qcol = int(boxes[k - 2, 1]), int(boxes[k - 2, 0])
        assert cue[row, col] > quiet[qrow, qcol] + 40


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(StorageError):
        generate_synthetic(tiny_synth_config(subjects=1), 0, blocker)
