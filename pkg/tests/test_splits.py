import pytest

from onsetnet.data.splits import make_splits
from onsetnet.errors import DataError

SUBJECTS = [f"s{i:02d}" for i in range(9)]


def test_nine_splits_of_seven_one_one():
    plans = make_splits(SUBJECTS)
    assert len(plans) == 9
    for i, plan in enumerate(plans):
        assert plan.split_id == i
        assert len(plan.train_subjects) == 7
        assert plan.test_subject == SUBJECTS[i]
        assert plan.validation_subject == SUBJECTS[(i + 1) % 9]
        assert not set(plan.train_subjects) & {plan.validation_subject, plan.test_subject}
        assert set(plan.train_subjects) | {plan.validation_subject, plan.test_subject} == set(SUBJECTS)


def test_each_subject_tested_once():
    assert sorted(plan.test_subject for plan in make_splits(SUBJECTS)) == SUBJECTS


@pytest.mark.parametrize("subjects", [SUBJECTS[:8], SUBJECTS + ["s09"], SUBJECTS[:8] + ["s00"]])
def test_wrong_subjects_rejected(subjects):
    with pytest.raises(DataError, match="exactly 9"):
        make_splits(subjects)
