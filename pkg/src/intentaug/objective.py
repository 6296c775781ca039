"""Recommendation cross-entropy, intent contrastive loss and the joint sum."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, NumericalError

CONTRASTIVE_VARIANTS = ("ratio", "infonce")


@dataclass(frozen=True)
class LossBreakdown:
    rec: float
    rec_aug: float | None
    contrastive: float | None
    joint: float
    lam: float
    tau: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_record(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def rec_loss(scores: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean softmax cross-entropy.

    ``scores`` is (n,) or (B, n) over real items; ``target`` holds positions
    into that axis (item index - 1).
    """
    if not torch.isfinite(scores).all():
        raise NumericalError("non-finite scores")
    if scores.dim() == 1:
        scores, target = scores[None], torch.as_tensor(target).reshape(1)
    # log_softmax subtracts the row max internally
    return F.cross_entropy(scores, torch.as_tensor(target, dtype=torch.long))


def contrastive_loss(h, h_pos, h_neg, tau: float = 1.0, variant: str = "ratio"):
    """Contrastive loss for anchor/positive/negative representations.

    The default ``ratio`` form is -log(exp(<h,h+>/tau) / exp(<h,h->/tau)),
    which reduces to (<h,h-> - <h,h+>)/tau and is evaluated that way. It has
    no lower bound. ``infonce`` puts both terms in the denominator instead.
    Batched inputs (B, d) give the mean over rows.
    """
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if variant not in CONTRASTIVE_VARIANTS:
        raise ConfigError(f"unknown contrastive variant {variant!r}")
    sim_pos = (h * h_pos).sum(-1) / tau
    sim_neg = (h * h_neg).sum(-1) / tau
    if variant == "ratio":
        per_row = sim_neg - sim_pos
    else:
        per_row = torch.logaddexp(sim_pos, sim_neg) - sim_pos
    return per_row.mean() if per_row.dim() else per_row


def contrastive_scalar(sim_pos: float, sim_neg: float, tau: float) -> float:
    """Plain-float version of the ratio loss, from similarities."""
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    return (sim_neg - sim_pos) / tau


def joint_loss(rec, rec_aug=None, contrastive=None, lam: float = 0.1):
    """rec + rec_aug + lam * contrastive; absent terms are skipped."""
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    total = rec
    if rec_aug is not None:
        total = total + rec_aug
    if contrastive is not None:
        total = total + lam * contrastive
    value = float(total.detach()) if torch.is_tensor(total) else float(total)
    if not math.isfinite(value):
        raise NumericalError(f"non-finite joint loss (rec={float(rec)!r})")
    return total
