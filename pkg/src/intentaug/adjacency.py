"""Per-item successor sets built from training windows."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import PAD
from .errors import ConfigError, DataError

MODES = ("immediate", "later")


@dataclass
class SuccessorIndex:
    """``succ[i]`` holds every item seen right after ``i`` in training data.

    ``counts`` keeps pair frequencies so a weighted sampler can be used;
    ``succ`` is the unweighted view. Items absent from ``succ`` have no
    successors.
    """

    succ: dict[int, frozenset[int]] = field(default_factory=dict)
    counts: dict[int, dict[int, int]] = field(default_factory=dict)
    built_from: int = 0
    mode: str = "immediate"
    _sorted: dict[int, tuple[int, ...]] = field(default_factory=dict, repr=False)

    def sorted_successors(self, item: int) -> tuple[int, ...]:
        cached = self._sorted.get(item)
        if cached is None:
            cached = tuple(sorted(self.succ.get(item, ())))
            self._sorted[item] = cached
        return cached

    def has_pair(self, a: int, b: int) -> bool:
        return b in self.succ.get(a, ())


def _pairs(seq, mode):
    if mode == "immediate":
        return zip(seq, seq[1:])
    return ((seq[a], seq[b]) for a in range(len(seq)) for b in range(a + 1, len(seq)))


def build_successor_index(train, mode: str = "immediate") -> SuccessorIndex:
    """Scan every training window plus its target for ordered item pairs.

    Only training instances may be passed here; validation and test targets
    must never reach the index.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown successor mode {mode!r}")
    counts: dict[int, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    n = 0
    for inst in train:
        n += 1
        seq = (*inst.input_items, inst.target)
        for a, b in _pairs(seq, mode):
            if a == PAD or b == PAD:
                raise DataError("padding index inside a training instance")
            counts[a][b] += 1
    counts = {a: dict(sorted(bs.items())) for a, bs in sorted(counts.items())}
    succ = {a: frozenset(bs) for a, bs in counts.items()}
    return SuccessorIndex(succ=succ, counts=counts, built_from=n, mode=mode)


def successors(index: SuccessorIndex, item: int) -> frozenset[int]:
    if item == PAD:
        raise ValueError("the padding index has no successor set")
    return index.succ.get(item, frozenset())


def save_index(index: SuccessorIndex, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in sorted(index.succ):
            fh.write(f"{item}: {' '.join(map(str, index.sorted_successors(item)))}\n")


def load_index(path: str | Path) -> SuccessorIndex:
    """Read the text dump back. Pair counts are not persisted; each pair gets
    count 1."""
    succ, counts = {}, {}
    for line in open(path, encoding="utf-8"):
        head, _, rest = line.partition(":")
        items = [int(x) for x in rest.split()]
        succ[int(head)] = frozenset(items)
        counts[int(head)] = {b: 1 for b in items}
    return SuccessorIndex(succ=succ, counts=counts)
