"""Joint training with Adam and early stopping on validation MRR."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np
import torch

from .adjacency import SuccessorIndex, build_successor_index
from .augment import AugmentationResult, augment_dataset
from .encoder import SequenceEncoder, init_params
from .errors import ConfigError, NumericalError
from .evaluator import evaluate
from .objective import CONTRASTIVE_VARIANTS, LossBreakdown, contrastive_loss, joint_loss, rec_loss
from .seqprep import SplitDataset, TrainInstance, pad_batch

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_ps", "no_cl", "no_both")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 512
    embedding_dim: int = 64
    dropout: float = 0.5
    max_len: int = 50
    lam: float = 0.1
    tau: float = 1.0
    K: int = 1
    retry_budget: int = 10
    patience: int = 10
    max_epochs: int = 200
    seed: int = 0
    ablation: str = "full"
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 256
    contrastive_variant: str = "ratio"
    successor_mode: str = "immediate"
    weighted_successors: bool = False
    regenerate_per_epoch: bool = False
    eval_batch_size: int = 512
    mask_history: bool = False

    def validate(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")
        if self.contrastive_variant not in CONTRASTIVE_VARIANTS:
            raise ConfigError(f"unknown contrastive variant {self.contrastive_variant!r}")
        for name in ("learning_rate", "batch_size", "embedding_dim", "max_len", "tau",
                     "K", "patience", "max_epochs", "eval_batch_size"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.lam < 0 or self.retry_budget < 0:
            raise ConfigError("lam and retry_budget must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def uses_rec_aug(self) -> bool:
        return self.ablation in ("full", "no_cl")

    @property
    def uses_contrastive(self) -> bool:
        return self.ablation in ("full", "no_ps")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    val_mrr: float
    wall_time: float

    def to_record(self) -> str:
        return json.dumps({"epoch": self.epoch, "loss": self.loss.to_dict(),
                           "val_mrr": self.val_mrr, "wall_time": self.wall_time},
                          sort_keys=True)


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def val_mrr(self) -> list[float]:
        return [e.val_mrr for e in self.epochs]


def early_stop_check(history, patience: int = 10) -> str:
    """'stop' once the last ``patience`` validation MRRs are all no better
    than the best value seen before them, else 'continue'."""
    trace = history.val_mrr if isinstance(history, TrainHistory) else list(history)
    if len(trace) <= patience:
        return "continue"
    best_before = max(trace[:-patience])
    if all(m <= best_before for m in trace[-patience:]):
        return "stop"
    return "continue"


def drive_early_stopping(step: Callable[[int], float], max_epochs: int,
                         patience: int) -> tuple[list[float], bool]:
    """Call ``step(epoch)`` for each epoch until early stopping fires.

    Returns the MRR trace and whether training stopped early.
    """
    trace: list[float] = []
    for epoch in range(max_epochs):
        trace.append(step(epoch))
        if early_stop_check(trace, patience) == "stop":
            return trace, True
    return trace, False


def _crop(slots: np.ndarray) -> np.ndarray:
    # drop leading columns that are padding in every row
    used = np.flatnonzero(slots.any(axis=0))
    return slots[:, used[0]:] if used.size else slots[:, -1:]


def train_epoch(model: SequenceEncoder, train: list[TrainInstance],
                aug: AugmentationResult | None, config: TrainConfig,
                optimizer: torch.optim.Optimizer, epoch: int) -> LossBreakdown:
    """One shuffled pass over the training instances."""
    pos_map, neg_map = aug.by_source() if aug is not None else ({}, {})
    order = np.random.default_rng([config.seed, epoch]).permutation(len(train))
    width = config.max_len
    sums = {"rec": 0.0, "rec_aug": 0.0, "contrastive": 0.0, "joint": 0.0}
    n_batches = 0
    model.train()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed * 1_000_003 + epoch)
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size].tolist()
            seqs = [train[i].input_items for i in idx]
            targets = [train[i].target - 1 for i in idx]
            n_orig = len(seqs)

            pos_rows = []
            if config.uses_rec_aug:
                pos_rows = [i for i in idx if i in pos_map]
            elif config.uses_contrastive:
                pos_rows = [i for i in idx if i in pos_map and i in neg_map]
            cl_rows = ([i for i in pos_rows if i in neg_map]
                       if config.uses_contrastive else [])
            seqs += [pos_map[i].input_items for i in pos_rows]
            seqs += [neg_map[i].input_items for i in cl_rows]

            slots = torch.from_numpy(_crop(pad_batch(seqs, width)))
            h = model.final_states(slots)
            scores_orig = model.scores(h[:n_orig])
            rec = rec_loss(scores_orig, torch.tensor(targets))

            rec_aug = None
            h_pos = h[n_orig:n_orig + len(pos_rows)]
            if config.uses_rec_aug:
                if pos_rows:
                    rec_aug = rec_loss(model.scores(h_pos),
                                       torch.tensor([pos_map[i].target - 1 for i in pos_rows]))
                else:
                    rec_aug = rec.new_zeros(())

            contrastive = None
            if config.uses_contrastive:
                if cl_rows:
                    where = {i: r for r, i in enumerate(idx)}
                    pos_at = {i: r for r, i in enumerate(pos_rows)}
                    anchor = h[[where[i] for i in cl_rows]]
                    hp = h_pos[[pos_at[i] for i in cl_rows]]
                    hn = h[n_orig + len(pos_rows):]
                    contrastive = contrastive_loss(anchor, hp, hn, config.tau,
                                                   config.contrastive_variant)
                else:
                    contrastive = rec.new_zeros(())

            loss = joint_loss(rec, rec_aug, contrastive, config.lam)
            optimizer.zero_grad()
            loss.backward()
            model.item_embeddings.weight.grad[0] = 0
            optimizer.step()
            model.zero_padding_row()

            n_batches += 1
            sums["rec"] += rec.item()
            sums["rec_aug"] += rec_aug.item() if rec_aug is not None else 0.0
            sums["contrastive"] += contrastive.item() if contrastive is not None else 0.0
            sums["joint"] += loss.item()
    if not n_batches:
        raise ConfigError("no training instances")
    mean = {k: v / n_batches for k, v in sums.items()}
    return LossBreakdown(rec=mean["rec"],
                         rec_aug=mean["rec_aug"] if config.uses_rec_aug else None,
                         contrastive=mean["contrastive"] if config.uses_contrastive else None,
                         joint=mean["joint"], lam=config.lam, tau=config.tau)


def make_optimizer(model, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                            betas=(0.9, 0.999), eps=1e-8)


@dataclass
class FitResult:
    model: SequenceEncoder
    history: TrainHistory
    index: SuccessorIndex | None
    augmentation: AugmentationResult | None


def build_model(config: TrainConfig, n_items: int) -> SequenceEncoder:
    return init_params(n_items=n_items, d=config.embedding_dim, n_heads=config.n_heads,
                       n_layers=config.n_layers, d_ff=config.d_ff, max_len=config.max_len,
                       dropout=config.dropout, seed=config.seed)


def fit(config: TrainConfig, splits: SplitDataset, on_epoch=None) -> FitResult:
    """Train from frozen splits and return the best-validation-MRR model.

    The successor index and augmentation are built from the training split
    only. Prediction uses the encoder alone.
    """
    config.validate()
    if not splits.train:
        raise ConfigError("training split is empty")
    if not splits.validation:
        raise ConfigError("validation split is empty")

    index = aug = None
    if config.ablation != "no_both":
        index = build_successor_index(splits.train, config.successor_mode)
        aug = augment_dataset(splits.train, index, config.K, config.seed,
                              config.retry_budget, config.weighted_successors)
        log.info("augmentation coverage: %s", aug.coverage.to_dict())

    model = build_model(config, splits.n_items)
    optimizer = make_optimizer(model, config)
    history = TrainHistory()
    mask = splits.histories if config.mask_history else None
    best = {"mrr": -1.0, "state": None}

    def step(epoch):
        nonlocal aug
        t0 = time.perf_counter()
        if config.regenerate_per_epoch and index is not None and epoch > 0:
            aug = augment_dataset(splits.train, index, config.K, config.seed * 1_000_003 + epoch,
                                  config.retry_budget, config.weighted_successors)
        losses = train_epoch(model, splits.train, aug, config, optimizer, epoch)
        val = evaluate(model, splits.validation, split="validation",
                       batch_size=config.eval_batch_size, mask_history=mask).mrr
        record = EpochRecord(epoch, losses, val, time.perf_counter() - t0)
        history.epochs.append(record)
        if val > best["mrr"]:
            best["mrr"] = val
            best["state"] = copy.deepcopy(model.state_dict())
            history.best_epoch = epoch
        log.info("epoch %d loss %.4f val_mrr %.4f", epoch, losses.joint, val)
        if on_epoch is not None:
            on_epoch(record)
        return val

    try:
        _, history.stopped_early = drive_early_stopping(step, config.max_epochs, config.patience)
    except NumericalError as exc:
        raise NumericalError(f"epoch {len(history.epochs)}: {exc}") from exc
    model.load_state_dict(best["state"])
    model.eval()
    return FitResult(model=model, history=history, index=index, augmentation=aug)
