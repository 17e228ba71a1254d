import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tkgprompt.kg import TemporalKG
from tkgprompt.sampler import (
    NoHistoryError,
    SamplerConfig,
    Tsg,
    TsgKind,
    anchor_weights,
    draw_anchors,
    draw_k,
    randomize_times,
    sample_tsg,
    tsg_to_tig,
)

from conftest import random_tkg

KINDS = list(TsgKind)


def _tsg(times):
    quads = np.array([(0, 0, 1, t) for t in times]).reshape(-1, 4)
    return Tsg(0, TsgKind.FIX_SUBJECT, quads)


def test_single_quad_pool_repeats():
    tkg = TemporalKG.from_splits([(0, 0, 1, 4), (2, 0, 1, 5)], None, None, ["a", "b", "c"], ["r"])
    tsg = sample_tsg(tkg, 0, TsgKind.FIX_SUBJECT, 3, np.random.default_rng(0))
    assert tsg.quads.tolist() == [[0, 0, 1, 4]] * 3


def test_empty_pool_signals_no_history(small_tkg):
    with pytest.raises(NoHistoryError):
        sample_tsg(small_tkg, 0, TsgKind.FIX_SUBJECT, 3, np.random.default_rng(0), time_upper_bound=-1)


@pytest.mark.parametrize("times, expected", [([2, 130], [0, 128]), ([7], [0]), ([5, 5, 9], [0, 0, 4])])
def test_intervals(times, expected):
    assert tsg_to_tig(_tsg(times)).intervals.tolist() == expected


def test_draw_k_degenerate_and_range():
    rng = np.random.default_rng(0)
    assert {draw_k(SamplerConfig(4, 4), rng) for _ in range(50)} == {4}
    ks = [draw_k(SamplerConfig(2, 12), rng) for _ in range(2000)]
    assert min(ks) == 2 and max(ks) == 12


def test_draw_k_histogram():
    rng = np.random.default_rng(1)
    ks = np.array([draw_k(SamplerConfig(2, 4), rng) for _ in range(10_000)])
    freq = np.bincount(ks, minlength=5)[2:] / len(ks)
    assert np.all(np.abs(freq - 1 / 3) <= 0.03)


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(5, 4)
    with pytest.raises(ValueError):
        SamplerConfig(strategy="zipf")


def test_frequency_weighting_two_entities():
    # e0 touches 3 train quads, e1 touches 1: weights 0.75 / 0.25
    tkg = TemporalKG.from_splits([(0, 0, 0, 1), (0, 0, 0, 2), (0, 0, 1, 3)], None, None, ["a", "b"], ["r"])
    w = anchor_weights(tkg, "frequency")
    np.testing.assert_allclose(w, [0.75, 0.25])
    draws = draw_anchors(w, 1000, np.random.default_rng(3))
    assert abs(np.mean(draws == 0) - 0.75) <= 0.05
    np.testing.assert_allclose(anchor_weights(tkg, "uniform"), [0.5, 0.5])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(KINDS), st.integers(1, 20), st.booleans())
def test_tsg_invariants(seed, kind, k, bounded):
    tkg = random_tkg(seed % 97)
    rng = np.random.default_rng(seed)
    n_anchor = tkg.num_relations if kind is TsgKind.FIX_RELATION else tkg.num_entities
    anchor = int(rng.integers(n_anchor))
    bound = int(rng.integers(1, 400)) if bounded else None
    try:
        tsg = sample_tsg(tkg, anchor, kind, k, rng, time_upper_bound=bound)
    except NoHistoryError:
        return
    q = tsg.quads
    assert len(q) == k
    assert np.all(np.diff(q[:, 3]) >= 0)
    assert np.all(q[:, kind.slot] == anchor)
    if bound is not None:
        assert np.all(q[:, 3] < bound)
    # every sampled row is a training fact
    train = {tuple(r) for r in tkg.train.tolist()}
    assert all(tuple(r) in train for r in q.tolist())

    tig = tsg_to_tig(tsg)
    assert len(tig) == len(tsg) and tig.intervals[0] == 0
    assert np.all(tig.intervals[1:] == np.diff(q[:, 3]))
    assert tig.intervals.sum() == q[-1, 3] - q[0, 3]
    assert np.array_equal(tig.items[:, :3], q[:, :3])


def test_determinism(small_tkg):
    a = sample_tsg(small_tkg, 3, TsgKind.FIX_OBJECT, 9, np.random.default_rng(5))
    b = sample_tsg(small_tkg, 3, TsgKind.FIX_OBJECT, 9, np.random.default_rng(5))
    np.testing.assert_array_equal(a.quads, b.quads)


def test_same_day_ties_keep_draw_order():
    tkg = TemporalKG.from_splits([(0, 0, 1, 5), (0, 1, 1, 5)], None, None, ["a", "b"], ["r", "q"])
    rng = np.random.default_rng(0)
    for _ in range(20):
        state = rng.bit_generator.state
        tsg = sample_tsg(tkg, 0, TsgKind.FIX_SUBJECT, 4, rng)
        replay = np.random.default_rng()
        replay.bit_generator.state = state
        picked = replay.choice(np.array([0, 1]), size=4, replace=True)
        assert tsg.quads[:, 1].tolist() == picked.tolist()


def test_randomize_times_in_range_and_sorted():
    tsg = _tsg([1, 2, 3, 4, 5])
    out = randomize_times(tsg, 100, 200, np.random.default_rng(0))
    assert np.all((out.quads[:, 3] >= 100) & (out.quads[:, 3] <= 200))
    assert np.all(np.diff(out.quads[:, 3]) >= 0)
