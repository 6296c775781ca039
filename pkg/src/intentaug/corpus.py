"""Interaction logs: parsing, k-core filtering, indexing, statistics and a
synthetic planted-intent generator."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError, DataError, ParseError

PAD = 0


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    timestamp: int

    def __post_init__(self):
        if not self.user or not self.item:
            raise DataError("user and item ids must be non-empty")
        if self.timestamp < 0:
            raise DataError(f"negative timestamp {self.timestamp}")


# Duplicates and unsorted order are allowed; filtering keeps relative order.
InteractionLog = list[Interaction]


@dataclass
class CatalogIndex:
    """Dense ids. Users map to [0, n_users); items map to [1, n_items], 0 is padding."""

    user_ids: dict[str, int] = field(default_factory=dict)
    item_ids: dict[str, int] = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def user_name(self, idx: int) -> str:
        return self._inverse(self.user_ids)[idx]

    def item_name(self, idx: int) -> str:
        if idx == PAD:
            raise KeyError("padding index has no item")
        return self._inverse(self.item_ids)[idx]

    @staticmethod
    def _inverse(mapping):
        return {v: k for k, v in mapping.items()}


@dataclass(frozen=True)
class StatsReport:
    n_users: int
    n_items: int
    n_interactions: int
    avg_seq_length: float
    density: float

    def to_record(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def parse_interactions(lines: Iterable[str], delimiter: str = ",",
                       skip_header: bool = False) -> InteractionLog:
    """Parse ``user, item, [rating], timestamp`` records.

    The rating column, when present, is ignored; the timestamp is always the
    last field. Blank lines are skipped.
    """
    log: InteractionLog = []
    for line_no, raw in enumerate(lines, start=1):
        if skip_header and line_no == 1:
            continue
        line = raw.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(delimiter)]
        if len(fields) not in (3, 4):
            raise ParseError(line_no, f"expected 3 or 4 fields, got {len(fields)}")
        user, item, ts = fields[0], fields[1], fields[-1]
        try:
            timestamp = int(float(ts))
        except ValueError:
            raise ParseError(line_no, f"bad timestamp {ts!r}") from None
        try:
            log.append(Interaction(user, item, timestamp))
        except DataError as exc:
            raise ParseError(line_no, str(exc)) from None
    return log


def read_interactions(path: str | Path, delimiter: str = ",",
                      skip_header: bool = False) -> InteractionLog:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"interaction file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_interactions(fh, delimiter=delimiter, skip_header=skip_header)


def write_interactions(log: InteractionLog, path: str | Path, delimiter: str = ",") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x in log:
            fh.write(f"{x.user}{delimiter}{x.item}{delimiter}{x.timestamp}\n")


def kcore_filter(log: InteractionLog, min_count: int = 5) -> InteractionLog:
    """Drop users and items with fewer than ``min_count`` interactions,
    repeating until nothing changes."""
    if min_count < 1:
        raise ConfigError("min_count must be >= 1")
    current = list(log)
    while True:
        users = Counter(x.user for x in current)
        items = Counter(x.item for x in current)
        kept = [x for x in current
                if users[x.user] >= min_count and items[x.item] >= min_count]
        if len(kept) == len(current):
            return kept
        current = kept


def build_index(log: InteractionLog) -> CatalogIndex:
    index = CatalogIndex()
    for x in log:
        if x.user not in index.user_ids:
            index.user_ids[x.user] = len(index.user_ids)
        if x.item not in index.item_ids:
            index.item_ids[x.item] = len(index.item_ids) + 1
    return index


def user_sequences(log: InteractionLog, index: CatalogIndex) -> dict[int, list[int]]:
    """Per-user item sequences in time order, keyed by dense user index.

    Equal timestamps keep their order in the log (sorting is stable).
    """
    events: dict[int, list[tuple[int, int]]] = {}
    for x in log:
        try:
            u, i = index.user_ids[x.user], index.item_ids[x.item]
        except KeyError as exc:
            raise DataError(f"id not in catalog index: {exc.args[0]!r}") from None
        events.setdefault(u, []).append((x.timestamp, i))
    return {u: [i for _, i in sorted(ev, key=lambda e: e[0])]
            for u, ev in sorted(events.items())}


def dataset_stats(log: InteractionLog) -> StatsReport:
    if not log:
        raise DataError("density is undefined for an empty log")
    n_users = len({x.user for x in log})
    n_items = len({x.item for x in log})
    n = len(log)
    return StatsReport(n_users=n_users, n_items=n_items, n_interactions=n,
                       avg_seq_length=n / n_users,
                       density=n / (n_users * n_items))


# --------------------------------------------------------------------------
# synthetic planted-intent corpora


@dataclass(frozen=True)
class SynthSpec:
    """Users walk per-cluster Markov chains over disjoint item blocks.

    ``chain_length_range`` bounds the length of one intent segment and
    ``segments_range`` the number of segments per user (both inclusive).
    ``branching`` is the number of successors each item has inside its block.
    """

    n_users: int = 500
    n_items: int = 50
    n_intent_clusters: int = 5
    chain_length_range: tuple[int, int] = (3, 6)
    noise_rate: float = 0.1
    segments_range: tuple[int, int] = (2, 4)
    branching: int = 2

    def validate(self) -> None:
        if not self.n_items >= self.n_intent_clusters >= 1:
            raise ConfigError("need n_items >= n_intent_clusters >= 1")
        if not 0 <= self.noise_rate < 1:
            raise ConfigError("noise_rate must lie in [0, 1)")
        if self.n_users < 1:
            raise ConfigError("n_users must be >= 1")
        for name in ("chain_length_range", "segments_range"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ConfigError(f"{name} must satisfy 1 <= lo <= hi")
        if self.branching < 1:
            raise ConfigError("branching must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        for key in ("chain_length_range", "segments_range"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad synth spec: {exc}") from None


@dataclass
class IntentWorld:
    """The planted structure behind a synthetic corpus (0-based item ids)."""

    blocks: list[np.ndarray]
    transition: np.ndarray  # (n_items, n_items) row-stochastic within each block

    def step(self, item: int, rng: np.random.Generator) -> int:
        row = self.transition[item]
        return int(rng.choice(len(row), p=row))

    def walk(self, cluster: int, length: int, rng: np.random.Generator) -> list[int]:
        item = int(rng.choice(self.blocks[cluster]))
        out = [item]
        for _ in range(length - 1):
            item = self.step(item, rng)
            out.append(item)
        return out


def make_world(spec: SynthSpec, rng: np.random.Generator) -> IntentWorld:
    spec.validate()
    blocks = np.array_split(np.arange(spec.n_items), spec.n_intent_clusters)
    P = np.zeros((spec.n_items, spec.n_items))
    for block in blocks:
        for item in block:
            others = block[block != item] if len(block) > 1 else block
            k = min(spec.branching, len(others))
            succ = rng.choice(others, size=k, replace=False)
            P[item, succ] = rng.dirichlet(np.ones(k)) if k > 1 else 1.0
    return IntentWorld(blocks=list(blocks), transition=P)


def synth_generate(spec: SynthSpec, seed: int) -> InteractionLog:
    """Generate a planted-intent interaction log, deterministic in ``seed``.

    Each user's history concatenates segments from randomly chosen clusters;
    each position is then replaced by a uniform random item with probability
    ``noise_rate``.
    """
    rng = np.random.default_rng(seed)
    world = make_world(spec, rng)
    log: InteractionLog = []
    for u in range(spec.n_users):
        items: list[int] = []
        n_seg = int(rng.integers(spec.segments_range[0], spec.segments_range[1] + 1))
        for _ in range(n_seg):
            cluster = int(rng.integers(spec.n_intent_clusters))
            length = int(rng.integers(spec.chain_length_range[0], spec.chain_length_range[1] + 1))
            items.extend(world.walk(cluster, length, rng))
        noisy = rng.random(len(items)) < spec.noise_rate
        replacement = rng.integers(spec.n_items, size=len(items))
        items = [int(r) if z else i for i, z, r in zip(items, noisy, replacement)]
        t = 1_000_000 + 1000 * u
        for i in items:
            t += int(rng.integers(1, 100))
            log.append(Interaction(f"u{u}", f"i{i}", t))
    return log
