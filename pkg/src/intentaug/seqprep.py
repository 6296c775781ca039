"""Leave-one-out splitting, sliding windows and fixed-length padding."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import PAD
from .errors import DataError


@dataclass(frozen=True)
class TrainInstance:
    user: int
    input_items: tuple[int, ...]
    target: int

    def __post_init__(self):
        object.__setattr__(self, "input_items", tuple(self.input_items))


@dataclass
class SplitDataset:
    train: list[TrainInstance]
    validation: list[TrainInstance]
    test: list[TrainInstance]
    n_items: int
    dropped_users: int = 0
    max_len: int = 50
    histories: dict[int, tuple[int, ...]] = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class PaddedSequence:
    slots: np.ndarray  # int64, length max_len
    valid_mask: np.ndarray  # bool, length max_len


def sliding_windows(seq, max_len: int, user: int = 0) -> list[TrainInstance]:
    """One instance per target position; the input is the preceding
    ``max_len`` items at most."""
    seq = list(seq)
    if len(seq) < 2:
        raise DataError("sliding windows need at least two items")
    return [TrainInstance(user, tuple(seq[max(0, t - max_len):t]), seq[t])
            for t in range(1, len(seq))]


def chrono_split(sequences: dict[int, list[int]], max_len: int = 50,
                 n_items: int | None = None) -> SplitDataset:
    """Last item is the test target, the one before it the validation target,
    and the remaining prefix is expanded into training windows.

    Users with fewer than three items are dropped and counted.
    """
    train, valid, test = [], [], []
    dropped = 0
    histories = {}
    for user, seq in sequences.items():
        n = len(seq)
        if n < 3:
            dropped += 1
            continue
        histories[user] = tuple(seq)
        test.append(TrainInstance(user, tuple(seq[max(0, n - 1 - max_len):n - 1]), seq[n - 1]))
        valid.append(TrainInstance(user, tuple(seq[max(0, n - 2 - max_len):n - 2]), seq[n - 2]))
        if n - 2 >= 2:
            train.extend(sliding_windows(seq[:n - 2], max_len, user))
    if n_items is None:
        n_items = max((max(s) for s in sequences.values() if s), default=0)
    return SplitDataset(train, valid, test, n_items=n_items, dropped_users=dropped,
                        max_len=max_len, histories=histories)


def pad_truncate(items, max_len: int) -> PaddedSequence:
    items = list(items)[-max_len:] if max_len > 0 else []
    if PAD in items:
        raise DataError("input already contains the padding index")
    slots = np.zeros(max_len, dtype=np.int64)
    mask = np.zeros(max_len, dtype=bool)
    if items:
        slots[max_len - len(items):] = items
        mask[max_len - len(items):] = True
    return PaddedSequence(slots, mask)


def pad_batch(sequences, max_len: int) -> np.ndarray:
    """Stack right-aligned padded slots for many sequences."""
    out = np.zeros((len(sequences), max_len), dtype=np.int64)
    for row, items in enumerate(sequences):
        items = list(items)[-max_len:]
        if items:
            out[row, max_len - len(items):] = items
    return out


# --------------------------------------------------------------------------
# persistence: one record per line, "user<TAB>space-separated items<TAB>target"

SPLIT_FILES = {"train": "train.tsv", "validation": "valid.tsv", "test": "test.tsv"}


def format_instance(inst: TrainInstance) -> str:
    return f"{inst.user}\t{' '.join(map(str, inst.input_items))}\t{inst.target}"


def parse_instance(line: str) -> TrainInstance:
    user, items, target = line.rstrip("\n").split("\t")
    return TrainInstance(int(user), tuple(int(i) for i in items.split()), int(target))


def save_splits(splits: SplitDataset, directory: str | Path) -> dict[str, str]:
    """Write the three split files plus a small meta file; return sha256 per file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, fname in SPLIT_FILES.items():
        with open(directory / fname, "w", encoding="utf-8") as fh:
            for inst in getattr(splits, name):
                fh.write(format_instance(inst) + "\n")
    with open(directory / "meta.tsv", "w", encoding="utf-8") as fh:
        fh.write(f"n_items\t{splits.n_items}\nmax_len\t{splits.max_len}\n"
                 f"dropped_users\t{splits.dropped_users}\n")
    with open(directory / "histories.tsv", "w", encoding="utf-8") as fh:
        for user, seq in sorted(splits.histories.items()):
            fh.write(f"{user}\t{' '.join(map(str, seq))}\n")
    return split_checksums(directory)


def split_checksums(directory: str | Path) -> dict[str, str]:
    directory = Path(directory)
    return {fname: hashlib.sha256((directory / fname).read_bytes()).hexdigest()
            for fname in SPLIT_FILES.values()}


def load_splits(directory: str | Path) -> SplitDataset:
    directory = Path(directory)
    if not (directory / "meta.tsv").is_file():
        raise DataError(f"no frozen splits in {directory}")
    meta = dict(line.rstrip("\n").split("\t") for line in open(directory / "meta.tsv"))
    parts = {}
    for name, fname in SPLIT_FILES.items():
        with open(directory / fname, encoding="utf-8") as fh:
            parts[name] = [parse_instance(line) for line in fh if line.strip()]
    histories = {}
    hist_path = directory / "histories.tsv"
    if hist_path.is_file():
        for line in open(hist_path, encoding="utf-8"):
            user, items = line.rstrip("\n").split("\t")
            histories[int(user)] = tuple(int(i) for i in items.split())
    return SplitDataset(parts["train"], parts["validation"], parts["test"],
                        n_items=int(meta["n_items"]), max_len=int(meta["max_len"]),
                        dropped_users=int(meta["dropped_users"]), histories=histories)
