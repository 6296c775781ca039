import dataclasses

import numpy as np
import pytest
import torch

from intentaug import trainer
from intentaug.adjacency import build_successor_index
from intentaug.augment import augment_dataset
from intentaug.corpus import SynthSpec, build_index, kcore_filter, synth_generate, user_sequences
from intentaug.encoder import save_checkpoint
from intentaug.errors import ConfigError
from intentaug.seqprep import SplitDataset, chrono_split
from intentaug.trainer import (
    TrainConfig, TrainHistory, build_model, drive_early_stopping, early_stop_check, fit,
    make_optimizer, train_epoch,
)


@pytest.fixture(scope="module")
def toy_splits():
    spec = SynthSpec(n_users=40, n_items=12, n_intent_clusters=2, noise_rate=0.0,
                     chain_length_range=(3, 4), segments_range=(2, 2))
    log = kcore_filter(synth_generate(spec, 0))
    idx = build_index(log)
    return chrono_split(user_sequences(log, idx), 10, idx.n_items)


def cfg(**kw):
    base = dict(embedding_dim=8, n_heads=2, n_layers=1, d_ff=16, max_len=10, batch_size=32,
                max_epochs=3, patience=2, seed=1, dropout=0.1, learning_rate=0.01)
    base.update(kw)
    return TrainConfig(**base)


def _params(model):
    return {k: v.clone() for k, v in model.state_dict().items()}


def test_early_stop_examples():
    assert early_stop_check([0.1, 0.2] + [0.2] * 10) == "stop"
    assert early_stop_check([0.1 * i for i in range(1, 15)]) == "continue"
    assert early_stop_check([0.1, 0.2] + [0.2] * 9) == "continue"
    assert early_stop_check([0.3]) == "continue"
    h = TrainHistory()
    assert early_stop_check(h) == "continue"


def test_drive_stops_at_first_satisfying_epoch():
    trace = [0.1, 0.3, 0.2, 0.25, 0.3, 0.1]
    seen, stopped = drive_early_stopping(lambda e: trace[e], 6, patience=3)
    assert stopped and seen == trace[:5]


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(ablation="nothing").validate()
    with pytest.raises(ConfigError):
        TrainConfig(tau=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rat": 0.1})


def _epoch(splits, config, aug, epochs=1):
    model = build_model(config, splits.n_items)
    opt = make_optimizer(model, config)
    losses = [train_epoch(model, splits.train, aug, config, opt, e) for e in range(epochs)]
    return model, losses


def test_train_epoch_deterministic(toy_splits):
    idx = build_successor_index(toy_splits.train)
    aug = augment_dataset(toy_splits.train, idx, 1, 0)
    m1, l1 = _epoch(toy_splits, cfg(), aug)
    m2, l2 = _epoch(toy_splits, cfg(), aug)
    assert l1 == l2
    for k, v in _params(m1).items():
        assert torch.equal(v, _params(m2)[k])


def test_no_both_equals_plain_cross_entropy(toy_splits):
    # with lam=0 and no augmentation, the joint objective adds exact zeros
    m1, _ = _epoch(toy_splits, cfg(ablation="no_both", lam=0.0), None)
    m2, _ = _epoch(toy_splits, cfg(ablation="full", lam=0.0), None)
    for k, v in _params(m1).items():
        assert torch.equal(v, _params(m2)[k]), k


def test_loss_decreases():
    spec = SynthSpec(n_users=12, n_items=10, n_intent_clusters=1, noise_rate=0.0, branching=1,
                     chain_length_range=(12, 12), segments_range=(1, 1))
    log = synth_generate(spec, 2)
    idx = build_index(log)
    splits = chrono_split(user_sequences(log, idx), 10, idx.n_items)
    splits.train = splits.train[:100]
    assert len(splits.train) == 100
    _, losses = _epoch(splits, cfg(ablation="no_both"), None, epochs=3)
    assert losses[2].rec < losses[0].rec


def test_padding_row_stays_zero(toy_splits):
    idx = build_successor_index(toy_splits.train)
    aug = augment_dataset(toy_splits.train, idx, 2, 0)
    model, _ = _epoch(toy_splits, cfg(), aug, epochs=2)
    assert torch.count_nonzero(model.item_embeddings.weight[0]) == 0


def test_loss_breakdown_invariant(toy_splits):
    idx = build_successor_index(toy_splits.train)
    aug = augment_dataset(toy_splits.train, idx, 1, 0)
    _, (lb,) = _epoch(toy_splits, cfg(lam=0.3), aug)
    assert abs(lb.joint - (lb.rec + lb.rec_aug + lb.lam * lb.contrastive)) < 1e-6


def test_fit_ablation_no_cl_never_calls_contrastive(toy_splits, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("contrastive loss evaluated")
    monkeypatch.setattr(trainer, "contrastive_loss", boom)
    res = fit(cfg(ablation="no_cl"), toy_splits)
    assert all(e.loss.contrastive is None for e in res.history.epochs)
    assert all(e.loss.rec_aug is not None for e in res.history.epochs)
    for e in res.history.epochs:
        assert abs(e.loss.joint - (e.loss.rec + e.loss.rec_aug)) < 1e-6


def test_fit_ablation_no_ps_keeps_contrastive(toy_splits, monkeypatch):
    calls = []
    real = trainer.rec_loss

    def spy(scores, target):
        calls.append(scores.shape[0])
        return real(scores, target)
    monkeypatch.setattr(trainer, "rec_loss", spy)
    res = fit(cfg(ablation="no_ps", max_epochs=1), toy_splits)
    assert all(e.loss.rec_aug is None for e in res.history.epochs)
    assert all(e.loss.contrastive is not None for e in res.history.epochs)
    # exactly one rec_loss call per batch: only originals
    n_batches = -(-len(toy_splits.train) // 32)
    assert len(calls) == n_batches


def test_fit_returns_best_epoch_and_is_reproducible(toy_splits, tmp_path):
    a = fit(cfg(max_epochs=4), toy_splits)
    b = fit(cfg(max_epochs=4), toy_splits)
    best = max(a.history.val_mrr)
    assert a.history.val_mrr[a.history.best_epoch] == best
    save_checkpoint(a.model, tmp_path / "a.bin")
    save_checkpoint(b.model, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_fit_early_stops(toy_splits):
    # updates far below float32 resolution leave the model frozen, so
    # validation MRR never improves after epoch 0
    res = fit(cfg(max_epochs=60, patience=2, learning_rate=1e-15), toy_splits)
    assert res.history.stopped_early and len(res.history.epochs) == 3


def test_fit_empty_train():
    empty = SplitDataset(train=[], validation=[], test=[], n_items=3)
    with pytest.raises(ConfigError):
        fit(cfg(), empty)


def test_regenerate_per_epoch_option(toy_splits):
    res = fit(cfg(regenerate_per_epoch=True, max_epochs=2), toy_splits)
    assert len(res.history.epochs) == 2
