import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tkgprompt.prompts import Bucket, IntervalDictionary, bucket_of
from tkgprompt.synthetic import ANSWER_MEDIUM, ANSWER_SHORT, balanced_design, interval_rule_tkg, sequel_tkg

RESPOND = 1


def _previous_fact_gap(quads, row, slot):
    """Days since the latest earlier-or-same-day fact sharing ``row``'s value in ``slot`` (excluding itself)."""
    same = quads[(quads[:, slot] == row[slot]) & (quads[:, 3] <= row[3])]
    same = same[~np.all(same == row, axis=1)]
    return None if len(same) == 0 else int(row[3] - same[:, 3].max())


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rule_holds_from_subject_history(seed):
    tkg = interval_rule_tkg(seed)
    for row in tkg.quads[tkg.quads[:, 1] == RESPOND]:
        gap = _previous_fact_gap(tkg.quads, row, 0)
        answer = ANSWER_SHORT if bucket_of(gap) is Bucket.SHT else ANSWER_MEDIUM
        assert bucket_of(gap) in (Bucket.SHT, Bucket.MID)
        assert row[2] == answer


@pytest.mark.parametrize("seed", [0, 1])
def test_rule_holds_between_consecutive_answers(seed):
    tkg = interval_rule_tkg(seed)
    responds = tkg.quads[tkg.quads[:, 1] == RESPOND]
    for slot in (1, 2):
        for row in responds:
            same = responds[(responds[:, slot] == row[slot]) & (responds[:, 3] < row[3])]
            if len(same) == 0:
                continue
            gap = int(row[3] - same[:, 3].max())
            if gap > 365:
                assert gap >= 36318  # every cross-episode gap reads the same capped phrase
                continue
            assert bucket_of(gap) is (Bucket.SHT if row[2] == ANSWER_SHORT else Bucket.MID)


def test_cross_episode_gaps_share_last_phrase():
    tkg = interval_rule_tkg(0)
    last = IntervalDictionary.default().entries[-1]
    times = np.unique(tkg.quads[:, 3])
    big = np.diff(times)[np.diff(times) > 365]
    assert len(big) >= 7 and np.all(big >= last.lo)


def test_train_split_is_balanced_per_subject():
    tkg = interval_rule_tkg(0, train_episodes=4)
    train = tkg.train[tkg.train[:, 1] == RESPOND]
    for s in np.unique(train[:, 0]):
        answers = train[train[:, 0] == s, 2]
        assert np.sum(answers == ANSWER_SHORT) == np.sum(answers == ANSWER_MEDIUM) == 2


def test_half_short_half_medium_each_episode():
    tkg = interval_rule_tkg(3)
    test = tkg.test[tkg.test[:, 1] == RESPOND]
    assert np.sum(test[:, 2] == ANSWER_SHORT) == np.sum(test[:, 2] == ANSWER_MEDIUM) == len(test) // 2


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 8), st.integers(0, 1000))
def test_balanced_design_margins(rows, cols, seed):
    m = balanced_design(rows, cols, np.random.default_rng(seed))
    checker = np.add.outer(np.arange(rows), np.arange(cols)) % 2
    assert sorted(m.sum(0)) == sorted(checker.sum(0))
    assert sorted(m.sum(1)) == sorted(checker.sum(1))


def test_guards():
    with pytest.raises(ValueError, match="even"):
        interval_rule_tkg(num_entities=19)
    with pytest.raises(ValueError, match="spacing"):
        interval_rule_tkg(spacing=(1000, 1200))


def test_sequel_pattern():
    tkg = sequel_tkg(0, pairs=4)
    q = tkg.quads
    for s, r, o, t in q[q[:, 1] == 0].tolist():
        assert [s, 1, o, t + 1] in q.tolist()
    assert tkg.split_sizes == (80, 0, 32)
