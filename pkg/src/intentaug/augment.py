"""Intent-segment insertion: positives splice a successor chain into an
interior adjacency, negatives append one at the end."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .adjacency import SuccessorIndex
from .seqprep import TrainInstance

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class AugmentedSample:
    source: TrainInstance
    source_index: int
    kind: str
    input_items: tuple[int, ...]
    target: int
    segment: tuple[int, ...]
    insertion_point: int | None = None  # number of source items before the segment


@dataclass(frozen=True)
class CoverageReport:
    n_instances: int
    n_positive: int
    n_negative: int
    n_both: int

    @property
    def positive_rate(self) -> float:
        return self.n_positive / self.n_instances if self.n_instances else 0.0

    @property
    def negative_rate(self) -> float:
        return self.n_negative / self.n_instances if self.n_instances else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(positive_rate=self.positive_rate, negative_rate=self.negative_rate)
        return d


@dataclass
class AugmentationResult:
    positives: list[AugmentedSample]
    negatives: list[AugmentedSample]
    coverage: CoverageReport

    def by_source(self) -> tuple[dict[int, AugmentedSample], dict[int, AugmentedSample]]:
        return ({s.source_index: s for s in self.positives},
                {s.source_index: s for s in self.negatives})


def _draw(index: SuccessorIndex, item: int, rng: np.random.Generator, weighted: bool):
    options = index.sorted_successors(item)
    if not options:
        return None
    if weighted:
        w = np.array([index.counts[item][b] for b in options], dtype=float)
        return options[int(rng.choice(len(options), p=w / w.sum()))]
    return options[int(rng.integers(len(options)))]


def gen_intent_segment(index: SuccessorIndex, start: int, K: int,
                       rng: np.random.Generator, weighted: bool = False):
    """Walk ``K`` steps through successor sets from ``start``.

    Returns the list of visited items (``start`` excluded), or None when the
    walk reaches an item with no successors.
    """
    if K < 1:
        raise ValueError("segment length K must be >= 1")
    out = []
    item = start
    for _ in range(K):
        item = _draw(index, item, rng, weighted)
        if item is None:
            return None
        out.append(item)
    return out


def make_positive(inst: TrainInstance, index: SuccessorIndex, K: int,
                  rng: np.random.Generator, retry_budget: int = 10,
                  source_index: int = 0, weighted: bool = False):
    """Insert a segment between a random adjacent pair (i_t, i_t+1).

    A draw is kept only if i_t+1 is a successor of the segment's last item.
    At most ``1 + retry_budget`` draws are made; returns None if all fail.
    """
    seq = inst.input_items
    if len(seq) < 2:
        return None
    for _ in range(1 + retry_budget):
        t = int(rng.integers(len(seq) - 1))
        seg = gen_intent_segment(index, seq[t], K, rng, weighted)
        if seg is None or not index.has_pair(seg[-1], seq[t + 1]):
            continue
        return AugmentedSample(
            source=inst, source_index=source_index, kind=POSITIVE,
            input_items=(*seq[:t + 1], *seg, *seq[t + 1:]), target=inst.target,
            segment=tuple(seg), insertion_point=t + 1)
    return None


def make_negative(inst: TrainInstance, index: SuccessorIndex, K: int,
                  rng: np.random.Generator, retry_budget: int = 10,
                  source_index: int = 0, weighted: bool = False):
    """Append a segment after the last input item.

    Chains whose final item has the original target among its successors are
    rejected, since they would keep the label consistent.
    """
    seq = inst.input_items
    if not seq:
        return None
    for _ in range(1 + retry_budget):
        seg = gen_intent_segment(index, seq[-1], K, rng, weighted)
        if seg is None:
            # empty sets are deterministic along the first hop only; keep trying
            if not index.sorted_successors(seq[-1]):
                return None
            continue
        if index.has_pair(seg[-1], inst.target):
            continue
        return AugmentedSample(
            source=inst, source_index=source_index, kind=NEGATIVE,
            input_items=(*seq, *seg), target=inst.target, segment=tuple(seg))
    return None


def instance_rng(seed: int, ordinal: int) -> np.random.Generator:
    return np.random.default_rng([seed, ordinal])


def augment_dataset(train: list[TrainInstance], index: SuccessorIndex, K: int = 1,
                    seed: int = 0, retry_budget: int = 10,
                    weighted: bool = False) -> AugmentationResult:
    """One positive and one negative attempt per training instance.

    Each instance draws from its own generator seeded by (seed, ordinal), so
    the output does not depend on processing order.
    """
    positives, negatives = [], []
    for n, inst in enumerate(train):
        rng = instance_rng(seed, n)
        pos = make_positive(inst, index, K, rng, retry_budget, n, weighted)
        neg = make_negative(inst, index, K, rng, retry_budget, n, weighted)
        if pos is not None:
            positives.append(pos)
        if neg is not None:
            negatives.append(neg)
    both = len({p.source_index for p in positives} & {q.source_index for q in negatives})
    return AugmentationResult(positives, negatives,
                              CoverageReport(len(train), len(positives), len(negatives), both))


def save_augmentation(result: AugmentationResult, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, samples in (("positives.tsv", result.positives), ("negatives.tsv", result.negatives)):
        with open(directory / name, "w", encoding="utf-8") as fh:
            for s in samples:
                ins = "" if s.insertion_point is None else str(s.insertion_point)
                fh.write("\t".join([s.kind, str(s.source_index), str(s.source.user),
                                    " ".join(map(str, s.input_items)), str(s.target), ins,
                                    " ".join(map(str, s.segment))]) + "\n")
    with open(directory / "coverage.json", "w", encoding="utf-8") as fh:
        json.dump(result.coverage.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_augmentation(directory: str | Path, train: list[TrainInstance]) -> AugmentationResult:
    directory = Path(directory)
    out = {}
    for name in ("positives.tsv", "negatives.tsv"):
        samples = []
        for line in open(directory / name, encoding="utf-8"):
            kind, src, _user, items, target, ins, seg = line.rstrip("\n").split("\t")
            samples.append(AugmentedSample(
                source=train[int(src)], source_index=int(src), kind=kind,
                input_items=tuple(int(i) for i in items.split()), target=int(target),
                segment=tuple(int(i) for i in seg.split()),
                insertion_point=int(ins) if ins else None))
        out[name] = samples
    pos, neg = out["positives.tsv"], out["negatives.tsv"]
    both = len({p.source_index for p in pos} & {q.source_index for q in neg})
    return AugmentationResult(pos, neg, CoverageReport(len(train), len(pos), len(neg), both))
