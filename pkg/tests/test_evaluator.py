import math

import numpy as np
import pytest
import torch

from intentaug.encoder import init_params
from intentaug.errors import DataError
from intentaug.evaluator import (
    RankRecord, evaluate, full_rank, hr_at_k, mrr, ndcg_at_k, rank_instances,
)
from intentaug.seqprep import TrainInstance


def sort_rank(scores, target):
    """Oracle: place the target after every item it ties with."""
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j == target))
    return order.index(target) + 1


def test_full_rank_examples():
    assert full_rank([0.1, 0.9, 0.5], 1) == 1
    assert full_rank([0.9, 0.5, 0.5], 1) == 3


def test_full_rank_matches_sort_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 20))
        scores = rng.integers(0, 5, size=n).astype(float).tolist()
        t = int(rng.integers(n))
        assert full_rank(scores, t) == sort_rank(scores, t)


def test_hr():
    ranks = [1, 5, 12]
    assert hr_at_k(ranks, 10) == pytest.approx(2 / 3)
    assert hr_at_k(ranks, 20) == 1.0
    assert hr_at_k([11, 30], 10) == 0.0


def test_ndcg():
    assert ndcg_at_k([1], 10) == 1.0
    assert ndcg_at_k([3], 10) == 0.5
    assert ndcg_at_k([11], 10) == 0.0


def test_mrr():
    assert mrr([1, 2, 4]) == pytest.approx(0.58333, abs=1e-5)
    assert mrr([1, 1]) == 1.0
    assert mrr([40]) == 1 / 40


def test_rank_records_accepted():
    assert hr_at_k([RankRecord(0, 1), RankRecord(1, 30)], 10) == 0.5


@pytest.mark.parametrize("fn", [lambda r: hr_at_k(r, 10), lambda r: ndcg_at_k(r, 10), mrr])
def test_empty_is_error(fn):
    with pytest.raises(DataError):
        fn([])


def _perfect_model(n_items):
    m = init_params(n_items=n_items, d=n_items, n_heads=1, n_layers=0, d_ff=4, max_len=3,
                    dtype=torch.float64)
    with torch.no_grad():
        m.positional.weight.zero_()
        m.item_embeddings.weight[1:] = torch.eye(n_items, dtype=torch.float64)
    return m


def test_perfect_model():
    # with no layers the final state is the last item's embedding, so the
    # model predicts "repeat the last item"
    m = _perfect_model(6)
    split = [TrainInstance(u, (1 + u % 6,), 1 + u % 6) for u in range(12)]
    rep = evaluate(m, split)
    for k in (10, 20, 50):
        assert rep.hr[k] == 1.0 and rep.ndcg[k] == 1.0
    assert rep.mrr == 1.0


def test_batched_ranks_match_per_user_ranking():
    m = init_params(n_items=15, d=8, n_heads=2, n_layers=1, d_ff=8, max_len=5)
    rng = np.random.default_rng(3)
    split = [TrainInstance(u, tuple(rng.integers(1, 16, size=rng.integers(1, 7)).tolist()),
                           int(rng.integers(1, 16))) for u in range(40)]
    recs = rank_instances(m, split, batch_size=7)
    with torch.no_grad():
        for inst, rec in zip(split, recs):
            from intentaug.encoder import encode
            from intentaug.seqprep import pad_truncate
            s = m.scores(encode(pad_truncate(inst.input_items, 5), m).final).numpy()
            assert rec.rank == full_rank(s, inst.target - 1)


def test_history_mask_option():
    m = _perfect_model(4)
    split = [TrainInstance(0, (2,), 3)]
    plain = rank_instances(m, split)[0].rank
    masked = rank_instances(m, split, mask_history={0: (2, 3)})[0].rank
    assert masked < plain


def test_report_invariants_random_model():
    m = init_params(n_items=30, d=8, n_heads=2, n_layers=1, d_ff=8, max_len=5, seed=1)
    rng = np.random.default_rng(0)
    split = [TrainInstance(u, tuple(rng.integers(1, 31, size=3).tolist()),
                           int(rng.integers(1, 31))) for u in range(100)]
    rep = evaluate(m, split)
    assert rep.ndcg[10] <= rep.ndcg[20] <= rep.ndcg[50]
    assert rep.hr[10] <= rep.hr[20] <= rep.hr[50]
    for k in rep.hr:
        assert 0 <= rep.ndcg[k] <= rep.hr[k] <= 1
    lines = rep.to_jsonl().splitlines()
    assert len(lines) == 4 and '"mrr"' in lines[-1]


def test_ndcg_formula_against_log():
    ranks = [1, 2, 7, 20, 51]
    expected = sum(1 / math.log2(1 + r) for r in ranks if r <= 20) / 5
    assert ndcg_at_k(ranks, 20) == pytest.approx(expected, abs=1e-15)
