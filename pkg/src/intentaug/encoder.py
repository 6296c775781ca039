"""Causal self-attention sequence encoder with tied item scoring."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .corpus import PAD
from .errors import ConfigError, DataError, NumericalError
from .seqprep import PaddedSequence


@dataclass(frozen=True)
class EncoderConfig:
    n_items: int
    d: int = 64
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 256
    max_len: int = 50
    dropout: float = 0.5

    def validate(self):
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if min(self.n_items, self.d, self.n_heads, self.d_ff, self.max_len) < 1 or self.n_layers < 0:
            raise ConfigError("encoder sizes must be positive")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads


@dataclass
class SequenceEncoding:
    hidden_states: torch.Tensor  # (max_len, d)
    final: torch.Tensor  # (d,)


class Dropout(nn.Module):
    """Inverted dropout drawn from a uniform mask; about twice as fast as the
    Bernoulli kernel on CPU and equally deterministic under a seeded generator."""

    def __init__(self, p):
        super().__init__()
        self.p = p

    def forward(self, x):
        if not self.training or self.p == 0:
            return x
        return x * (torch.rand_like(x) >= self.p) / (1 - self.p)


class CausalSelfAttention(nn.Module):
    def __init__(self, d, n_heads, dropout):
        super().__init__()
        self.n_heads = n_heads
        self.query = nn.Linear(d, d)
        self.key = nn.Linear(d, d)
        self.value = nn.Linear(d, d)
        self.output = nn.Linear(d, d)
        self.dropout = Dropout(dropout)

    def forward(self, x, allowed):
        B, T, d = x.shape
        hd = d // self.n_heads

        def split(t):
            return t.view(B, T, self.n_heads, hd).transpose(1, 2)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        scores = scores.masked_fill(~allowed[:, None], float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(B, T, d)
        return self.output(out)


class Block(nn.Module):
    """Pre-norm residual block: attention then GELU feed-forward."""

    def __init__(self, d, n_heads, d_ff, dropout):
        super().__init__()
        self.attn_norm = nn.LayerNorm(d)
        self.attn = CausalSelfAttention(d, n_heads, dropout)
        self.ffn_norm = nn.LayerNorm(d)
        self.ffn = nn.Sequential(nn.Linear(d, d_ff), nn.GELU(), Dropout(dropout),
                                 nn.Linear(d_ff, d))
        self.dropout = Dropout(dropout)

    def forward(self, x, allowed):
        x = x + self.dropout(self.attn(self.attn_norm(x), allowed))
        return x + self.dropout(self.ffn(self.ffn_norm(x)))


class SequenceEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.item_embeddings = nn.Embedding(config.n_items + 1, config.d, padding_idx=PAD)
        self.positional = nn.Embedding(config.max_len, config.d)
        self.input_dropout = Dropout(config.dropout)
        self.blocks = nn.ModuleList(
            Block(config.d, config.n_heads, config.d_ff, config.dropout)
            for _ in range(config.n_layers))
        # no learned gain: keeps the final representation at fixed scale, so
        # inner-product similarities between views stay bounded
        self.final_norm = (nn.LayerNorm(config.d, elementwise_affine=False)
                           if config.n_layers else nn.Identity())

    def embed(self, slots: torch.Tensor) -> torch.Tensor:
        """Item embedding plus positional encoding. Slots are right-aligned, so
        a batch narrower than ``max_len`` uses the last positional rows."""
        T = slots.shape[-1]
        if T > self.config.max_len:
            raise DataError(f"sequence width {T} exceeds max_len {self.config.max_len}")
        if slots.numel() and (slots.min() < 0 or slots.max() > self.config.n_items):
            raise IndexError("item index out of range")
        pos = self.positional.weight[self.config.max_len - T:]
        return self.item_embeddings(slots) + pos

    def forward(self, slots: torch.Tensor) -> torch.Tensor:
        """(B, T) item slots -> (B, T, d) last-layer hidden states."""
        valid = slots != PAD
        T = slots.shape[-1]
        causal = torch.ones(T, T, dtype=torch.bool, device=slots.device).tril()
        eye = torch.eye(T, dtype=torch.bool, device=slots.device)
        # padding keys are hidden from every query; a query with nothing
        # visible (a padding slot) attends to itself to keep softmax finite
        allowed = (causal & valid[:, None, :]) | eye
        x = self.input_dropout(self.embed(slots))
        for block in self.blocks:
            x = block(x, allowed)
        return self.final_norm(x)

    def final_states(self, slots: torch.Tensor) -> torch.Tensor:
        return self.forward(slots)[:, -1]

    def scores(self, final: torch.Tensor) -> torch.Tensor:
        """Inner product with every real item's embedding (index j -> item j+1)."""
        return final @ self.item_embeddings.weight[1:].T

    @torch.no_grad()
    def zero_padding_row(self):
        self.item_embeddings.weight[PAD].zero_()


def init_params(n_items: int, d: int = 64, n_heads: int = 2, n_layers: int = 2,
                d_ff: int = 256, max_len: int = 50, dropout: float = 0.5,
                seed: int = 0, dtype=torch.float32) -> SequenceEncoder:
    config = EncoderConfig(n_items=n_items, d=d, n_heads=n_heads, n_layers=n_layers,
                           d_ff=d_ff, max_len=max_len, dropout=dropout)
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = SequenceEncoder(config)
        for name, p in model.named_parameters():
            if name.endswith("weight") and p.dim() == 2:
                nn.init.normal_(p, std=0.02)
            elif "norm" not in name:
                nn.init.zeros_(p)
    model.zero_padding_row()
    return model.to(dtype).eval()


def _slots_tensor(seq: PaddedSequence | np.ndarray, model: SequenceEncoder) -> torch.Tensor:
    slots = seq.slots if isinstance(seq, PaddedSequence) else np.asarray(seq)
    slots = torch.as_tensor(np.asarray(slots, dtype=np.int64))
    width = model.config.max_len
    if slots.shape[-1] < width:
        slots = F.pad(slots, (width - slots.shape[-1], 0), value=PAD)
    return slots


def embed(seq: PaddedSequence, model: SequenceEncoder) -> torch.Tensor:
    return model.embed(_slots_tensor(seq, model)[None])[0]


def encode(seq: PaddedSequence, model: SequenceEncoder,
           training_mode: bool = False) -> SequenceEncoding:
    """Encode one padded sequence. Shorter slot arrays are left-padded to
    ``max_len`` first, so extra leading padding never changes the result."""
    slots = _slots_tensor(seq, model)
    if not bool((slots != PAD).any()):
        raise DataError("cannot encode a sequence with no valid slots")
    was_training = model.training
    model.train(training_mode)
    try:
        with torch.set_grad_enabled(training_mode):
            hidden = model(slots[None])[0]
    finally:
        model.train(was_training)
    return SequenceEncoding(hidden_states=hidden, final=hidden[-1])


def score_all_items(final: torch.Tensor, model: SequenceEncoder) -> torch.Tensor:
    return model.scores(final)


def backward(loss: torch.Tensor, model: SequenceEncoder) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of a scalar loss for every parameter."""
    if not torch.isfinite(loss).all():
        raise NumericalError(f"non-finite loss {loss.item()!r}")
    params = dict(model.named_parameters())
    grads = torch.autograd.grad(loss, list(params.values()), retain_graph=True,
                                allow_unused=True)
    out = {}
    for (name, p), g in zip(params.items(), grads):
        out[name] = torch.zeros_like(p) if g is None else g.clone()
    out["item_embeddings.weight"][PAD] = 0
    return out


# --------------------------------------------------------------------------
# checkpoints: magic line, JSON header with shapes, raw little-endian tensors

MAGIC = b"INTENTAUG-CKPT\n"
VERSION = 1


def save_checkpoint(model: SequenceEncoder, path: str | Path) -> None:
    state = model.state_dict()
    tensors, blobs = [], []
    for name in sorted(state):
        arr = state[name].detach().cpu().numpy()
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str})
        blobs.append(np.ascontiguousarray(arr).tobytes())
    header = json.dumps({"version": VERSION, "config": asdict(model.config),
                         "tensors": tensors}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path, config: EncoderConfig | None = None) -> SequenceEncoder:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path} is not a checkpoint")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        if header["version"] != VERSION:
            raise DataError(f"unsupported checkpoint version {header['version']}")
        stored = EncoderConfig(**header["config"])
        if config is not None and config != stored:
            raise ConfigError(f"checkpoint config {stored} does not match {config}")
        model = SequenceEncoder(stored)
        expected = model.state_dict()
        state = {}
        for t in header["tensors"]:
            dt = np.dtype(t["dtype"])
            count = int(np.prod(t["shape"])) if t["shape"] else 1
            arr = np.frombuffer(fh.read(count * dt.itemsize), dtype=dt).reshape(t["shape"])
            if tuple(arr.shape) != tuple(expected[t["name"]].shape):
                raise DataError(f"shape mismatch for {t['name']}")
            state[t["name"]] = torch.from_numpy(arr.copy())
    model = model.to(next(iter(state.values())).dtype)
    model.load_state_dict(state)
    return model
