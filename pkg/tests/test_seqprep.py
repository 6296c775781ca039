import numpy as np
import pytest
from hypothesis import given, strategies as st

from intentaug.errors import DataError
from intentaug.seqprep import (
    TrainInstance, chrono_split, load_splits, pad_truncate, save_splits, sliding_windows,
    split_checksums,
)

A, B, C, D = 1, 2, 3, 4


def test_split_four_items():
    s = chrono_split({0: [A, B, C, D]})
    assert s.test == [TrainInstance(0, (A, B, C), D)]
    assert s.validation == [TrainInstance(0, (A, B), C)]
    assert s.train == [TrainInstance(0, (A,), B)]


def test_split_drops_short_users():
    s = chrono_split({0: [A, B], 1: [A, B, C, D]})
    assert s.dropped_users == 1
    assert {i.user for i in s.test + s.validation + s.train} == {1}


def test_split_three_items_has_no_train_windows():
    s = chrono_split({0: [A, B, C]})
    assert s.train == [] and len(s.test) == 1 and len(s.validation) == 1


def test_split_window_cap():
    seq = list(range(1, 61))
    s = chrono_split({0: seq}, max_len=50)
    assert s.test[0].input_items == tuple(range(10, 60))
    assert s.test[0].target == 60
    assert s.validation[0].input_items == tuple(range(9, 59))


@given(st.dictionaries(st.integers(0, 20), st.lists(st.integers(1, 30), min_size=0, max_size=40),
                       max_size=8), st.integers(1, 12))
def test_split_properties(seqs, max_len):
    s = chrono_split(seqs, max_len)
    for inst in s.train + s.validation + s.test:
        assert 1 <= len(inst.input_items) <= max_len
        assert 0 not in inst.input_items
    for user, seq in seqs.items():
        if len(seq) < 3:
            continue
        train_positions = len([i for i in s.train if i.user == user])
        # train targets are positions 2..n-2; validation n-1, test n
        assert train_positions == max(0, len(seq) - 3)


def test_windows_enumeration():
    assert sliding_windows([A, B, C, D], 50) == [
        TrainInstance(0, (A,), B), TrainInstance(0, (A, B), C), TrainInstance(0, (A, B, C), D)]


def test_windows_cap_keeps_recent():
    assert [w.input_items for w in sliding_windows([A, B, C, D], 2)] == [(A,), (A, B), (B, C)]


def test_windows_minimal():
    assert sliding_windows([A, B], 5) == [TrainInstance(0, (A,), B)]
    with pytest.raises(DataError):
        sliding_windows([A], 5)


@given(st.lists(st.integers(1, 50), min_size=2, max_size=30), st.integers(1, 10))
def test_windows_count_and_pairs(seq, max_len):
    ws = sliding_windows(seq, max_len)
    assert len(ws) == len(seq) - 1
    assert [(w.input_items[-1], w.target) for w in ws] == list(zip(seq, seq[1:]))


def test_pad_left():
    p = pad_truncate([1, 2, 3], 5)
    assert p.slots.tolist() == [0, 0, 1, 2, 3]
    assert p.valid_mask.tolist() == [False, False, True, True, True]


def test_pad_truncates_front():
    assert pad_truncate(range(1, 8), 5).slots.tolist() == [3, 4, 5, 6, 7]


def test_pad_empty():
    p = pad_truncate([], 3)
    assert p.slots.tolist() == [0, 0, 0] and not p.valid_mask.any()


def test_pad_rejects_padding_index():
    with pytest.raises(DataError):
        pad_truncate([1, 0, 2], 5)


@given(st.lists(st.integers(1, 99), max_size=20), st.integers(1, 25))
def test_pad_round_trip(items, max_len):
    p = pad_truncate(items, max_len)
    assert len(p.slots) == max_len
    assert p.slots[p.valid_mask].tolist() == items[-max_len:]
    assert (p.slots[~p.valid_mask] == 0).all()
    # padding only left of all valid items
    if p.valid_mask.any():
        first = int(np.argmax(p.valid_mask))
        assert p.valid_mask[first:].all()


def test_save_load_round_trip(tmp_path):
    s = chrono_split({0: [1, 2, 3, 4, 5], 3: [2, 4, 6, 8]}, n_items=8)
    sums = save_splits(s, tmp_path)
    back = load_splits(tmp_path)
    assert back.train == s.train and back.validation == s.validation and back.test == s.test
    assert back.n_items == 8 and back.histories == s.histories
    assert split_checksums(tmp_path) == sums
    save_splits(back, tmp_path / "again")
    assert split_checksums(tmp_path / "again") == sums


def test_load_missing(tmp_path):
    with pytest.raises(DataError):
        load_splits(tmp_path / "nope")
