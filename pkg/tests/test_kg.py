import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tkgprompt.kg import (
    DataFormatError,
    TemporalKG,
    dump_tkg,
    entity_frequency,
    load_dataset_dir,
    read_quads,
    snapshot,
)

from conftest import random_tkg, write_dataset

ENTS = ["Iran", "Iraq", "Citizen (India)"]
RELS = ["Make a visit", "Threaten"]


def test_granularity_converts_hours_to_days(tmp_path):
    d = write_dataset(tmp_path / "ds", [(0, 0, 1, 168, 0)], [], [(1, 1, 2, 192)], ENTS, RELS)
    tkg = load_dataset_dir(d, granularity=24)
    assert tkg.train.tolist() == [[0, 0, 1, 7]]
    assert tkg.test[0, 3] == 8


def test_granularity_must_divide(tmp_path):
    d = write_dataset(tmp_path / "ds", [(0, 0, 1, 100)], [], [], ENTS, RELS)
    with pytest.raises(DataFormatError, match="granularity"):
        load_dataset_dir(d, 24)


def test_empty_train_rejected(tmp_path):
    d = write_dataset(tmp_path / "ds", [], [], [(0, 0, 1, 24)], ENTS, RELS)
    with pytest.raises(DataFormatError, match="empty split"):
        load_dataset_dir(d, 24)


def test_split_order_violation(tmp_path):
    d = write_dataset(tmp_path / "ds", [(0, 0, 1, 0), (1, 0, 2, 48)], [(2, 1, 0, 48)], [], ENTS, RELS)
    with pytest.raises(DataFormatError, match="split order"):
        load_dataset_dir(d, 24)


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "q.txt"
    p.write_text("0\t0\t1\t0\n0\t0\n")
    with pytest.raises(DataFormatError, match=r"q\.txt:2"):
        read_quads(p)


def test_out_of_vocabulary_ids(tmp_path):
    d = write_dataset(tmp_path / "ds", [(0, 5, 1, 0)], [], [], ENTS, RELS)
    with pytest.raises(DataFormatError, match="relation id"):
        load_dataset_dir(d, 24)
    d = write_dataset(tmp_path / "ds2", [(7, 0, 1, 0)], [], [], ENTS, RELS)
    with pytest.raises(DataFormatError, match="entity id"):
        load_dataset_dir(d, 24)


def test_duplicates_are_kept():
    q = [(0, 0, 1, 3), (0, 0, 1, 3)]
    assert TemporalKG.from_splits(q, None, None, ENTS, RELS).num_train == 2


def test_quads_sorted_by_time_then_ids():
    q = np.array([(2, 0, 1, 5), (0, 1, 2, 5), (1, 0, 0, 1)])
    tkg = TemporalKG.from_splits(q, None, None, ENTS, RELS)
    assert tkg.quads.tolist() == [[1, 0, 0, 1], [0, 1, 2, 5], [2, 0, 1, 5]]


def test_snapshot():
    q = [(0, 0, 1, 5), (1, 0, 2, 5), (2, 1, 0, 5), (0, 1, 2, 6), (1, 1, 1, 6)]
    tkg = TemporalKG.from_splits(q, None, None, ENTS, RELS)
    assert snapshot(tkg, 5) == {(0, 0, 1), (1, 0, 2), (2, 1, 0)}
    assert snapshot(tkg, 99) == set()


def test_snapshots_partition_triples(small_tkg):
    triples = sorted(tuple(r[:3]) for r in small_tkg.quads.tolist())
    union = []
    for t in np.unique(small_tkg.quads[:, 3]):
        lo, hi = np.searchsorted(small_tkg.quads[:, 3], [t, t + 1])
        assert set(tuple(r[:3]) for r in small_tkg.quads[lo:hi].tolist()) == snapshot(small_tkg, int(t))
        union += [tuple(r[:3]) for r in small_tkg.quads[lo:hi].tolist()]
    assert sorted(union) == triples


def test_entity_frequency_hand_count():
    # e0 touches 3 quads (self-loops count once), e1 touches 1, e2 none
    q = [(0, 0, 0, 1), (0, 1, 0, 2), (0, 0, 1, 3)]
    w = entity_frequency(TemporalKG.from_splits(q, None, None, ENTS, RELS))
    np.testing.assert_allclose(w, [0.75, 0.25, 0.0])


def test_entity_frequency_uniform_when_symmetric():
    q = [(0, 0, 1, 1), (1, 0, 2, 2), (2, 0, 0, 3)]
    np.testing.assert_allclose(entity_frequency(TemporalKG.from_splits(q, None, None, ENTS, RELS)), [1 / 3] * 3)


def test_round_trip(tmp_path, small_tkg):
    dump_tkg(small_tkg, tmp_path / "out")
    back = load_dataset_dir(tmp_path / "out", granularity=1)
    np.testing.assert_array_equal(back.quads, small_tkg.quads)
    assert back.entity_names == small_tkg.entity_names
    assert back.relation_names == small_tkg.relation_names
    assert back.split_sizes == small_tkg.split_sizes


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 400))
def test_index_consistency(seed, n):
    tkg = random_tkg(seed, n_train=n, n_test=0)
    q = tkg.quads
    for e in range(tkg.num_entities):
        expected = [i for i in range(len(q)) if q[i, 0] == e or q[i, 2] == e]
        assert tkg.by_entity[e].tolist() == expected
        assert tkg.by_subject[e].tolist() == [i for i in range(len(q)) if q[i, 0] == e]
        assert tkg.by_object[e].tolist() == [i for i in range(len(q)) if q[i, 2] == e]
    for r in range(tkg.num_relations):
        assert tkg.by_relation[r].tolist() == [i for i in range(len(q)) if q[i, 1] == r]


def test_quads_are_read_only(small_tkg):
    with pytest.raises(ValueError):
        small_tkg.quads[0, 0] = 1
