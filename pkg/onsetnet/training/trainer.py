"""学習ループ

1 エポック = バランスの取れたミニバッチの列。エポックごとに検証被験者で f 値と損失を求め、
チェックポイントを保存する。最良の検証 f 値 (同値なら早いエポック) を best.ckpt にする。
"""
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from onsetnet.checkpoint import save_checkpoint
from onsetnet.core.seeding import substream
from onsetnet.data.annotations import OnsetDataset
from onsetnet.data.frames import WindowExtractor
from onsetnet.data.sampler import BalancedBatchSampler, build_index
from onsetnet.errors import NumericError, StorageError
from onsetnet.evaluation.report import evaluate_model
from onsetnet.network import Model, backward, build_model, forward_with_cache, inactive_fractions, parameters, weight_parameters
from onsetnet.nn.losses import l2_penalty, weighted_soft_xent
from onsetnet.nn.tensor import TRAIN, LossSpec, Tensor
from onsetnet.schemas import HistoryRecord, RunConfig, SplitPlan
from onsetnet.training.optim import OptimizerState, rmsprop_step

logger = logging.getLogger(__name__)

HISTORY_NAME = "history.csv"
BEST_NAME = "best.ckpt"
CHECKPOINT_PATTERN = "epoch_{:03d}.ckpt"


@dataclass(frozen=True)
class StepMetrics:
    loss: float
    data_loss: float
    l2: float
    grad_norm: float
    inactive: Dict[str, float] = field(default_factory=dict)


@dataclass
class FitResult:
    out_dir: Path
    best_epoch: int
    best_f: float
    best_checkpoint: Path
    history: List[HistoryRecord]
    model: Model


def _check_finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite values in {name}")


def train_step(
    model: Model,
    inputs: Tensor,
    targets: Tensor,
    optimizer: OptimizerState,
    loss_spec: LossSpec,
    l2_lambda: float,
    rng: np.random.Generator,
    lr: Optional[float] = None,
    grad_clip: Optional[float] = None,
) -> StepMetrics:
    """順伝播 (学習モード) -> 損失 -> 逆伝播 -> RMSprop を 1 回行う"""
    _, logits, cache = forward_with_cache(model, inputs, TRAIN, rng)
    _check_finite("logits", logits)
    data_loss, grad_logits = weighted_soft_xent(logits, targets, loss_spec)
    named = weight_parameters(model)
    penalty, l2_grads = l2_penalty([tensor for _, tensor in named], l2_lambda)
    loss = data_loss + penalty
    _check_finite("loss", loss)

    grads = backward(model, cache, grad_logits)
    for (name, _), grad in zip(named, l2_grads):
        grads[name] = grads[name] + grad
    for name, grad in grads.items():
        _check_finite(f"gradient of {name}", grad)

    grad_norm = float(np.sqrt(sum(np.sum(np.square(g, dtype=np.float64)) for g in grads.values())))
    if grad_clip is not None and grad_norm > grad_clip:
        scale = grad_clip / grad_norm
        grads = {name: grad * scale for name, grad in grads.items()}

    rmsprop_step(parameters(model), grads, optimizer, optimizer.current_lr if lr is None else lr)
    return StepMetrics(loss, data_loss, penalty, grad_norm, inactive_fractions(cache))


def write_history(path: Path, history: List[HistoryRecord]) -> Path:
    table = pd.DataFrame([record.dict() for record in history], columns=list(HistoryRecord.__fields__))
    try:
        table.to_csv(path, index=False, float_format="%.8f")
    except OSError as exc:
        raise StorageError(f"cannot write history {path}: {exc}") from exc
    return path


def fit(
    dataset: OnsetDataset,
    split: SplitPlan,
    config: RunConfig,
    out_dir,
    threads: int = 1,
) -> FitResult:
    """学習被験者で学習し、検証被験者で早期終了の基準を計算する (テスト被験者は読まない)"""
    out_dir = Path(config.train.checkpoint_dir or out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create checkpoint directory {out_dir}: {exc}") from exc

    seed = config.seed
    data, train = config.data, config.train
    index = build_index(dataset, split.train_subjects, data.da_factor, data.near_radius, data.near_target)
    sampler = BalancedBatchSampler(index, seed, data.max_jitter)
    model = build_model(config.model, substream(seed, "init"))
    optimizer = OptimizerState.from_config(train)
    loss_spec = LossSpec(tuple(train.class_weights))
    extractor = WindowExtractor(
        dataset, config.model.roi_names, config.model.roi_pixels, config.model.channels_in,
        margin=data.crop_margin, threads=threads, cache_size=data.frame_cache,
    )

    history: List[HistoryRecord] = []
    best_epoch, best_f = -1, -1.0
    for epoch in range(train.max_epochs):
        lr = optimizer.start_epoch(epoch)
        losses, inactive = [], []
        batches = sampler.epoch(epoch, train.max_batches_per_epoch)
        total = min(sampler.batches_per_epoch, train.max_batches_per_epoch or sampler.batches_per_epoch)
        for batch in tqdm(batches, total=total, desc=f"epoch {epoch}", unit="batch", leave=False, disable=None):
            inputs = extractor.batch(batch.windows)
            metrics = train_step(
                model, inputs, batch.targets, optimizer, loss_spec, train.l2_lambda,
                substream(seed, "dropout", epoch, batch.number), grad_clip=train.grad_clip,
            )
            losses.append(metrics.loss)
            inactive.append(metrics.inactive)
        clamped = extractor.counter.reset()
        if clamped:
            logger.debug("epoch %d: %d ROI boxes clamped at frame borders", epoch, clamped)

        report, _ = evaluate_model(
            model, dataset, split.validation_subject, config.eval, data, extractor, loss_spec, method="validation",
        )
        record = HistoryRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_loss=report.loss,
            val_precision=report.precision,
            val_recall=report.recall,
            val_f=report.f,
        )
        history.append(record)
        dead = {layer: float(np.mean([step[layer] for step in inactive])) for layer in inactive[0]}
        logger.info(
            "epoch %d: lr %.3g train loss %.4f val loss %.4f P %.3f R %.3f F %.3f",
            epoch, lr, record.train_loss, record.val_loss, record.val_precision, record.val_recall, record.val_f,
        )
        logger.info("epoch %d: inactive ReLU fraction %s", epoch, {k: round(v, 3) for k, v in dead.items()})

        metadata = {"split_id": split.split_id, "seed": seed, **record.dict()}
        save_checkpoint(model, out_dir / CHECKPOINT_PATTERN.format(epoch), metadata)
        if record.val_f > best_f:
            best_epoch, best_f = epoch, record.val_f
        write_history(out_dir / HISTORY_NAME, history)

    best_path = out_dir / BEST_NAME
    try:
        shutil.copyfile(out_dir / CHECKPOINT_PATTERN.format(best_epoch), best_path)
    except OSError as exc:
        raise StorageError(f"cannot write {best_path}: {exc}") from exc
    logger.info("best epoch %d (validation f %.3f) -> %s", best_epoch, best_f, best_path)
    return FitResult(out_dir, best_epoch, best_f, best_path, history, model)
