"""クラス別のサンプル索引とバランスの取れたミニバッチ

各ミニバッチは 24 サンプル: not-an-onset 12、onset 6、near-onset 6。
バッチの中身は (seed, epoch, batch_number) だけで決まる。
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from onsetnet.core.seeding import substream
from onsetnet.data.annotations import OnsetDataset
from onsetnet.data.labels import Label, SampleWindow, classify_video, target_for
from onsetnet.errors import DataError, ShapeError
from onsetnet.nn.tensor import DEFAULT_DTYPE, Tensor

logger = logging.getLogger(__name__)

BATCH_SIZE = 24
BATCH_COMPOSITION = {Label.NON_ONSET: 12, Label.ONSET: 6, Label.NEAR_ONSET: 6}
POOL_ORDER = (Label.NON_ONSET, Label.ONSET, Label.NEAR_ONSET)
# onset はバッチの 1/4 なので、1 エポックで各 onset を da_factor 回使うと 4 * O * d サンプル
ONSET_SHARE = BATCH_SIZE // BATCH_COMPOSITION[Label.ONSET]


def epoch_size_for(onset_windows: int, da_factor: int) -> int:
    return ONSET_SHARE * onset_windows * da_factor


def augment_offsets(rng: np.random.Generator, max_jitter: int, count: int) -> List[Tuple[int, int]]:
    """切り出し位置のずらし量。先頭は常に (0, 0)"""
    if count < 1:
        raise ShapeError(f"offset count must be >= 1, got {count}")
    offsets = [(0, 0)]
    if count > 1:
        draws = rng.integers(-max_jitter, max_jitter + 1, size=(count - 1, 2))
        offsets.extend((int(dx), int(dy)) for dx, dy in draws)
    return offsets


@dataclass(frozen=True)
class SampleIndex:
    """クラスごとのウィンドウ一覧。各行は (動画番号, 参照フレーム)"""

    video_ids: Tuple[str, ...]
    pools: Dict[Label, np.ndarray]
    da_factor: int
    near_target: float = 0.75

    @property
    def epoch_size(self) -> int:
        return epoch_size_for(len(self.pools[Label.ONSET]), self.da_factor)

    def pool_sizes(self) -> Dict[str, int]:
        return {label.value: len(self.pools[label]) for label in POOL_ORDER}

    def window(self, label: Label, element: int, offset: Tuple[int, int] = (0, 0)) -> SampleWindow:
        video, ref_frame = self.pools[label][element]
        return SampleWindow(
            self.video_ids[video], int(ref_frame), label, target_for(label, self.near_target), offset
        )


def build_index(
    dataset: OnsetDataset,
    subjects: Sequence[str],
    da_factor: int = 4,
    near_radius: int = 1,
    near_target: float = 0.75,
) -> SampleIndex:
    """被験者の動画から範囲内の全ウィンドウを列挙し、クラスごとに分ける"""
    if not subjects:
        raise DataError("no subjects given for the sample index")
    if da_factor < 1:
        raise ShapeError(f"da_factor must be >= 1, got {da_factor}")
    rows: Dict[Label, List[Tuple[int, int]]] = {label: [] for label in POOL_ORDER}
    video_ids: List[str] = []
    for subject in subjects:
        for record in dataset.videos_of(subject):
            position = len(video_ids)
            video_ids.append(record.video_id)
            ann = record.annotations
            for ref_frame, label in classify_video(ann.onsets, ann.fps, ann.duration_frames, near_radius).items():
                rows[label].append((position, ref_frame))
    pools = {label: np.asarray(rows[label], dtype=np.int64).reshape(-1, 2) for label in POOL_ORDER}
    index = SampleIndex(tuple(video_ids), pools, da_factor, near_target)
    logger.info("sample index over %d videos: %s, epoch size %d", len(video_ids), index.pool_sizes(), index.epoch_size)
    return index


@dataclass(frozen=True)
class Batch:
    epoch: int
    number: int
    windows: List[SampleWindow]
    targets: Tensor

    def composition(self) -> Dict[Label, int]:
        counts = {label: 0 for label in POOL_ORDER}
        for window in self.windows:
            counts[window.label] += 1
        return counts


class BalancedBatchSampler:
    """エポックごとにプールをシャッフルし、重複なしで順に取り出す

    小さいプールは使い切ると新しい順列で再利用する (周回)。各サンプルは da_factor 個の
    切り出し位置を持ち、周回ごとに別の位置を使う。
    """

    def __init__(
        self,
        index: SampleIndex,
        seed: int,
        max_jitter: int = 4,
        composition: Optional[Dict[Label, int]] = None,
    ):
        self.index = index
        self.seed = seed
        self.max_jitter = max_jitter
        self.composition = dict(composition or BATCH_COMPOSITION)
        for label, count in self.composition.items():
            if count and len(index.pools[label]) == 0:
                raise DataError(f"the {label.value} pool is empty")
        self._permutations: Dict[Tuple[int, Label, int], np.ndarray] = {}
        self._cached_epoch: Optional[int] = None

    @property
    def batches_per_epoch(self) -> int:
        return max(self.index.epoch_size // BATCH_SIZE, 1)

    def _permutation(self, epoch: int, label: Label, cycle: int) -> np.ndarray:
        if self._cached_epoch != epoch:
            self._permutations.clear()
            self._cached_epoch = epoch
        key = (epoch, label, cycle)
        if key not in self._permutations:
            rng = substream(self.seed, "pool", label.value, epoch, cycle)
            self._permutations[key] = rng.permutation(len(self.index.pools[label]))
        return self._permutations[key]

    def _offset(self, label: Label, element: int, slot: int) -> Tuple[int, int]:
        rng = substream(self.seed, "crop", label.value, element)
        return augment_offsets(rng, self.max_jitter, self.index.da_factor)[slot]

    def sample_batch(self, epoch: int, batch_number: int) -> Batch:
        windows = []
        for label in POOL_ORDER:
            count = self.composition.get(label, 0)
            size = len(self.index.pools[label])
            for position in range(batch_number * count, (batch_number + 1) * count):
                cycle, slot_in_cycle = divmod(position, size)
                element = int(self._permutation(epoch, label, cycle)[slot_in_cycle])
                offset = self._offset(label, element, (epoch + cycle) % self.index.da_factor)
                windows.append(self.index.window(label, element, offset))
        order = substream(self.seed, "order", epoch, batch_number).permutation(len(windows))
        windows = [windows[i] for i in order]
        targets = np.asarray([window.target for window in windows], dtype=DEFAULT_DTYPE)
        return Batch(epoch, batch_number, windows, targets)

    def epoch(self, epoch: int, limit: Optional[int] = None) -> Iterator[Batch]:
        count = self.batches_per_epoch if limit is None else min(limit, self.batches_per_epoch)
        for number in range(count):
            yield self.sample_batch(epoch, number)


def sample_batch(index: SampleIndex, seed: int, epoch: int, batch_number: int, max_jitter: int = 4) -> Batch:
    """(seed, epoch, batch_number) で決まるバッチを 1 つ取り出す"""
    return BalancedBatchSampler(index, seed, max_jitter).sample_batch(epoch, batch_number)
