"""Batching, the training loop's contracts, and reproducibility."""

import numpy as np
import pytest

from sensorflex.channels import DATA_GROUPS, UNUSED_GROUPS, ChannelGroup
from sensorflex.data import PackedPixels, extract_packed, synth_generate
from sensorflex.errors import ConfigError
from sensorflex.head import FocalLossConfig
from sensorflex.model import ModelConfig, build_params
from sensorflex.rng import make_rng
from sensorflex.train import (
    TrainConfig,
    batch_forward_backward,
    read_metrics_csv,
    shuffle_batches,
    train,
    write_metrics_csv,
)
from sensorflex.tokenizer import NormStats

SMALL_MODEL = dict(d_model=16, n_layers=2, n_heads=4)


def separable_pixels(n, seed=0, margin=3.0):
    """Linearly separable two-group toy set: S1 and NDVI carry the signal,
    remaining channels are uninformative noise (keeps stats well-defined)."""
    rng = make_rng(seed, 70)
    labels = (rng.random(n) < 0.4).astype(np.int8)
    channels = rng.normal(0.0, 0.3, size=(n, 13))
    shift = np.where(labels == 1, -margin, margin)
    channels[:, 0] = -12.0 + shift + rng.normal(0, 0.3, n)   # VV
    channels[:, 1] = -19.0 + shift + rng.normal(0, 0.3, n)   # VH
    channels[:, 12] = np.where(labels == 1, -0.4, 0.5) + rng.normal(0, 0.05, n)
    months = rng.integers(0, 12, size=n)
    return PackedPixels(channels, months, labels)


class TestShuffleBatches:
    def test_batch_sizes(self):
        batches = list(shuffle_batches(np.arange(10), 4, seed=0, epoch=0))
        assert [len(b) for b in batches] == [4, 4, 2]

    def test_same_seed_epoch_same_order(self):
        a = np.concatenate(list(shuffle_batches(np.arange(20), 6, 3, 2)))
        b = np.concatenate(list(shuffle_batches(np.arange(20), 6, 3, 2)))
        assert np.array_equal(a, b)

    def test_different_epoch_different_order(self):
        a = np.concatenate(list(shuffle_batches(np.arange(50), 7, 3, 0)))
        b = np.concatenate(list(shuffle_batches(np.arange(50), 7, 3, 1)))
        assert not np.array_equal(a, b)

    def test_union_is_input_multiset(self):
        data = make_rng(0, 71).integers(0, 5, size=33)
        out = np.concatenate(list(shuffle_batches(data, 8, 1, 4)))
        assert sorted(out.tolist()) == sorted(data.tolist())

    def test_packed_pixels_supported(self):
        px = separable_pixels(10)
        batches = list(shuffle_batches(px, 4, 0, 0))
        assert [len(b) for b in batches] == [4, 4, 2]
        assert isinstance(batches[0], PackedPixels)

    def test_bad_batch_size(self):
        with pytest.raises(ConfigError):
            list(shuffle_batches(np.arange(4), 0, 0, 0))


@pytest.fixture(scope="module")
def separable_run():
    px = separable_pixels(1000)
    val = separable_pixels(300, seed=1)
    cfg = TrainConfig(lr=5e-3, batch_size=256, max_epochs=50, early_stop_patience=50,
                      seed=0, loss=FocalLossConfig())
    groups = (ChannelGroup.S1, ChannelGroup.NDVI)
    model_cfg = ModelConfig(**SMALL_MODEL, seed=0)
    result = train(px, val, model_cfg, cfg, groups=groups)
    return result


class TestTrainLoop:
    def test_separable_set_reaches_high_f1(self, separable_run):
        train_rows = [r for r in separable_run.log if r.split == "train"]
        assert max(r.f1 for r in train_rows) > 0.99

    def test_loss_decreases_after_warmup(self, separable_run):
        losses = [r.loss for r in separable_run.log if r.split == "train"]
        violations = sum(1 for a, b in zip(losses[5:], losses[6:]) if b > a + 1e-3)
        assert violations <= 2

    def test_log_has_both_splits_per_epoch(self, separable_run):
        epochs = {r.epoch for r in separable_run.log}
        for e in epochs:
            splits = [r.split for r in separable_run.log if r.epoch == e]
            assert sorted(splits) == ["train", "val"]

    def test_best_epoch_tracks_max_val_f1(self, separable_run):
        val_rows = [r for r in separable_run.log if r.split == "val"]
        best = max(val_rows, key=lambda r: r.f1)
        assert separable_run.best_f1 == best.f1

    def test_no_flood_pixels_rejected(self):
        px = separable_pixels(100)
        px.labels[:] = 0
        with pytest.raises(ConfigError, match="no flood"):
            train(px, separable_pixels(50, seed=1), ModelConfig(**SMALL_MODEL),
                  TrainConfig(max_epochs=1))

    def test_no_data_pixels_excluded_from_training(self):
        """Poisoning no-data pixel values must not change the trained weights."""
        base = separable_pixels(400, seed=3)
        val = separable_pixels(100, seed=4)
        cfg = TrainConfig(lr=1e-3, batch_size=128, max_epochs=2, seed=1)
        model_cfg = ModelConfig(**SMALL_MODEL, seed=1)

        with_nodata = PackedPixels(base.channels.copy(), base.months.copy(),
                                   base.labels.copy())
        with_nodata.labels[:50] = -1
        poisoned = PackedPixels(with_nodata.channels.copy(), with_nodata.months.copy(),
                                with_nodata.labels.copy())
        poisoned.channels[:50] = 1e6

        a = train(with_nodata, val, model_cfg, cfg)
        b = train(poisoned, val, model_cfg, cfg)
        for name in a.params.names():
            assert np.array_equal(a.params[name], b.params[name])


class TestDeterminismAndFreezing:
    def make_sets(self):
        chips, _ = synth_generate(11, 4, size=16, split_counts_=(3, 1, 0))
        return extract_packed(chips[:3]), extract_packed(chips[3:])

    def run(self, threads, epochs=3):
        tr, va = self.make_sets()
        cfg = TrainConfig(lr=1e-3, batch_size=128, max_epochs=epochs,
                          seed=5, threads=threads)
        return train(tr, va, ModelConfig(**SMALL_MODEL, seed=5), cfg)

    def test_same_seed_bit_identical(self):
        a, b = self.run(1), self.run(1)
        assert a.log == b.log
        for name in a.params.names():
            assert np.array_equal(a.params[name], b.params[name])

    def test_thread_count_does_not_change_results(self):
        a, b = self.run(1), self.run(4)
        assert a.log == b.log
        for name in a.params.names():
            assert np.array_equal(a.params[name], b.params[name])

    def test_frozen_encodings_unchanged(self):
        tr, va = self.make_sets()
        model_cfg = ModelConfig(**SMALL_MODEL, seed=6)
        before = build_params(model_cfg)
        result = train(tr, va, model_cfg, TrainConfig(lr=1e-3, batch_size=256,
                                                      max_epochs=3, seed=6))
        final = result.params
        assert np.array_equal(final["pos_enc"], before["pos_enc"])
        assert np.array_equal(final["month_enc"], before["month_enc"])

    def test_unused_group_embeddings_bit_identical(self):
        tr, va = self.make_sets()
        model_cfg = ModelConfig(**SMALL_MODEL, seed=7)
        before = build_params(model_cfg)
        result = train(tr, va, model_cfg, TrainConfig(lr=1e-3, batch_size=256,
                                                      max_epochs=3, seed=7))
        for g in UNUSED_GROUPS:
            assert np.array_equal(result.params[f"embed.{g.value}"],
                                  before[f"embed.{g.value}"])

    def test_unused_group_gradients_exactly_zero(self):
        tr, _ = self.make_sets()
        model_cfg = ModelConfig(**SMALL_MODEL, seed=8)
        params = build_params(model_cfg)
        stats = NormStats.from_channels(tr.channels)
        batch_forward_backward(params, model_cfg, stats, tr.select(np.arange(64)),
                               FocalLossConfig())
        for g in UNUSED_GROUPS:
            assert not params.grad(f"embed.{g.value}").any()
        assert not params.grad("pos_enc").any()
        assert not params.grad("month_enc").any()
        assert params.grad("embed.S1").any()


class TestMetricsCsv:
    def test_round_trip(self, tmp_path, separable_run):
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, separable_run.log)
        assert read_metrics_csv(path) == separable_run.log

    def test_header(self, tmp_path):
        write_metrics_csv(tmp_path / "m.csv", [])
        assert (tmp_path / "m.csv").read_text() == "epoch,split,loss,precision,recall,f1,miou\n"
