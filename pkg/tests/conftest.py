import shutil

import numpy as np
import pytest

from onsetnet.core.config import get_env
from onsetnet.data.annotations import load_annotations
from onsetnet.data.synth import generate_synthetic
from onsetnet.schemas import DataConfig, EvalConfig, ModelConfig, PathsConfig, RunConfig, SynthConfig, TrainConfig

TINY_ROIS = ["mouth", "clarinet_tip"]
SYNTH_SEED = 3


def tiny_synth_config(**changes) -> SynthConfig:
    """9 被験者 x 1 動画、3 秒、48x36 の小さな合成データ"""
    values = dict(
        subjects=9,
        videos_per_subject=1,
        duration_sec=3.0,
        frame_width=48,
        frame_height=36,
        roi_size=16,
    )
    values.update(changes)
    return SynthConfig(**values)


def tiny_model_config(**changes) -> ModelConfig:
    values = dict(
        roi_names=TINY_ROIS,
        roi_pixels=(8, 8),
        channels_in=1,
        conv_channels=(2, 2, 2, 2, 2),
        pool_after=[1, 2],
        fc1_width=4,
        fc2_width=8,
    )
    values.update(changes)
    return ModelConfig(**values)


def tiny_run_config(manifest, out_dir, **sections) -> RunConfig:
    values = dict(
        seed=5,
        paths=PathsConfig(data=str(manifest), out=str(out_dir)),
        model=tiny_model_config(),
        data=DataConfig(),
        train=TrainConfig(max_epochs=2, max_batches_per_epoch=2),
        eval=EvalConfig(batch_size=32),
    )
    values.update(sections)
    return RunConfig(**values)


# key=value の設定ファイル (CLI テスト用)
TINY_CONFIG_LINES = [
    "model.roi_names=mouth,clarinet_tip",
    "model.roi_pixels=8,8",
    "model.channels_in=1",
    "model.conv_channels=2,2,2,2,2",
    "model.pool_after=1,2",
    "model.fc1_width=4",
    "model.fc2_width=8",
    "train.max_batches_per_epoch=2",
    "eval.batch_size=32",
    "eval.baseline_trials=20",
    "synth.subjects=9",
    "synth.videos_per_subject=1",
    "synth.duration_sec=3.0",
    "synth.frame_width=48",
    "synth.frame_height=36",
    "synth.roi_size=16",
]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_manifest(tmp_path_factory):
    """セッション中に 1 度だけ生成する合成データセット (読み取り専用で使う)"""
    out_dir = tmp_path_factory.mktemp("synth")
    return generate_synthetic(tiny_synth_config(), SYNTH_SEED, out_dir)


@pytest.fixture
def dataset(synth_manifest):
    return load_annotations(synth_manifest, TINY_ROIS)


@pytest.fixture
def dataset_copy(synth_manifest, tmp_path):
    """書き換えてよいデータセットのコピー (マニフェストのパスを返す)"""
    root = tmp_path / "dataset"
    shutil.copytree(synth_manifest.parent, root)
    return root / synth_manifest.name


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.conf"
    path.write_text("\n".join(TINY_CONFIG_LINES) + "\n", encoding="utf-8")
    return path


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    """環境変数のキャッシュをテストごとに捨てる"""
    monkeypatch.delenv("ONSETNET_THREADS", raising=False)
    monkeypatch.delenv("ONSETNET_LOG_LEVEL", raising=False)
    get_env.cache_clear()
    yield
    get_env.cache_clear()
