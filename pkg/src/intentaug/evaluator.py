"""Full-ranking evaluation: HR@K, NDCG@K and MRR with pessimistic ties."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import DataError
from .seqprep import pad_batch

DEFAULT_KS = (10, 20, 50)


@dataclass(frozen=True)
class RankRecord:
    user: int
    rank: int


@dataclass
class MetricsReport:
    hr: dict[int, float]
    ndcg: dict[int, float]
    mrr: float
    n_users: int
    split: str
    ranks: list[RankRecord] = field(default_factory=list, repr=False)

    def records(self) -> list[dict]:
        out = [{"split": self.split, "k": k, "hr": self.hr[k], "ndcg": self.ndcg[k],
                "n_users": self.n_users} for k in sorted(self.hr)]
        out.append({"split": self.split, "mrr": self.mrr, "n_users": self.n_users})
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())


def full_rank(scores, target: int) -> int:
    """1 + number of other items scoring at least as high as ``target``."""
    scores = np.asarray(scores)
    return int(np.count_nonzero(scores >= scores[target]))


def _ranks(ranks):
    values = [r.rank if isinstance(r, RankRecord) else int(r) for r in ranks]
    if not values:
        raise DataError("metric is undefined on an empty rank list")
    return values


def hr_at_k(ranks, k: int) -> float:
    values = _ranks(ranks)
    return sum(1 for r in values if r <= k) / len(values)


def ndcg_at_k(ranks, k: int) -> float:
    values = _ranks(ranks)
    return sum(1.0 / math.log2(1 + r) if r <= k else 0.0 for r in values) / len(values)


def mrr(ranks) -> float:
    values = _ranks(ranks)
    return sum(1.0 / r for r in values) / len(values)


def report_from_ranks(ranks: list[RankRecord], Ks=DEFAULT_KS, split="test") -> MetricsReport:
    return MetricsReport(hr={k: hr_at_k(ranks, k) for k in Ks},
                         ndcg={k: ndcg_at_k(ranks, k) for k in Ks},
                         mrr=mrr(ranks), n_users=len(ranks), split=split, ranks=list(ranks))


@torch.no_grad()
def rank_instances(model, instances, batch_size: int = 512,
                   mask_history: dict[int, tuple[int, ...]] | None = None) -> list[RankRecord]:
    """Encode each input, score all items and rank the held-out target.

    With ``mask_history`` the user's other interacted items are pushed to
    -inf before ranking; by default nothing is excluded.
    """
    was_training = model.training
    model.eval()
    out = []
    width = model.config.max_len
    try:
        for start in range(0, len(instances), batch_size):
            chunk = instances[start:start + batch_size]
            slots = torch.from_numpy(pad_batch([i.input_items for i in chunk], width))
            scores = model.scores(model.final_states(slots))
            if mask_history is not None:
                for row, inst in enumerate(chunk):
                    seen = [i - 1 for i in set(mask_history.get(inst.user, ())) if i != inst.target]
                    scores[row, seen] = -math.inf
            targets = torch.tensor([i.target - 1 for i in chunk])
            tscore = scores.gather(1, targets[:, None])
            counts = (scores >= tscore).sum(1)
            out.extend(RankRecord(inst.user, int(c)) for inst, c in zip(chunk, counts))
    finally:
        model.train(was_training)
    return out


def evaluate(model, instances, Ks=DEFAULT_KS, split: str = "test", batch_size: int = 512,
             mask_history=None) -> MetricsReport:
    if not instances:
        raise DataError(f"{split} split is empty")
    ranks = rank_instances(model, instances, batch_size, mask_history)
    return report_from_ranks(ranks, Ks, split)
