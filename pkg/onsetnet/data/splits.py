from typing import List, Sequence

from onsetnet.errors import DataError
from onsetnet.schemas import LOSO_SUBJECTS, SplitPlan


def make_splits(subjects: Sequence[str]) -> List[SplitPlan]:
    """leave-one-subject-out の 9 分割 (学習 7、検証 1、テスト 1)

    分割 i は被験者 i をテスト、被験者 (i+1) mod 9 を検証に使う。
    """
    subjects = list(subjects)
    if len(subjects) != LOSO_SUBJECTS or len(set(subjects)) != LOSO_SUBJECTS:
        raise DataError(f"LOSO splits need exactly {LOSO_SUBJECTS} distinct subjects, got {subjects}")
    plans = []
    for i, test in enumerate(subjects):
        validation = subjects[(i + 1) % LOSO_SUBJECTS]
        train = [s for s in subjects if s not in (test, validation)]
        plans.append(SplitPlan(split_id=i, train_subjects=train, validation_subject=validation, test_subject=test))
    return plans
