"""Tokenization, NDVI, masking invariance, and normalization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sensorflex.channels import CANONICAL_ORDER, DATA_CHANNELS, DATA_GROUPS, ChannelGroup
from sensorflex.errors import ConfigError, DataError, EmptyInputError
from sensorflex.model import ModelConfig, build_params
from sensorflex.rng import make_rng
from sensorflex.tokenizer import (
    GROUP_SLICE,
    NormStats,
    PixelSample,
    compute_ndvi,
    denormalize,
    normalize,
    sinusoid_table,
    tokenize,
    tokenize_batch_fwd,
)

S1 = ChannelGroup.S1
NDVI = ChannelGroup.NDVI


@pytest.fixture(scope="module")
def params():
    return build_params(ModelConfig(seed=11))


def make_sample(rng, groups=DATA_GROUPS, month=4):
    from sensorflex.channels import n_channels
    values = {}
    for g in groups:
        if g is S1:
            values[g] = rng.uniform(-25.0, -5.0, size=2)
        elif g is NDVI:
            values[g] = rng.uniform(-1.0, 1.0, size=1)
        else:
            values[g] = rng.uniform(0.0, 1.0, size=n_channels(g))
    return PixelSample(values=values, month=month)


class TestTokenize:
    def test_token_count_is_surviving_groups(self, params):
        rng = make_rng(0, 20)
        sample = make_sample(rng, groups=(S1, NDVI))
        tokens, groups = tokenize(sample, set(), params)
        assert tokens.shape == (2, 128)
        assert groups == (S1, NDVI)

    def test_masking_removes_token_without_perturbing_survivors(self, params):
        rng = make_rng(1, 20)
        sample = make_sample(rng, groups=(S1, NDVI))
        full, _ = tokenize(sample, set(), params)
        masked, groups = tokenize(sample, {NDVI}, params)
        assert groups == (S1,)
        assert np.array_equal(masked[0], full[0])

    def test_full_sample_gives_six_tokens(self, params):
        sample = make_sample(make_rng(2, 20))
        tokens, groups = tokenize(sample, set(), params)
        assert tokens.shape == (6, 128)
        assert groups == DATA_GROUPS

    def test_all_masked_raises(self, params):
        sample = make_sample(make_rng(3, 20))
        with pytest.raises(EmptyInputError):
            tokenize(sample, set(DATA_GROUPS), params)

    def test_wrong_value_length_raises(self, params):
        sample = make_sample(make_rng(4, 20))
        sample.values[S1] = np.array([1.0, 2.0, 3.0])
        with pytest.raises(DataError):
            tokenize(sample, set(), params)

    @given(mask_bits=st.integers(0, 2 ** 6 - 1), seed=st.integers(0, 200))
    @settings(max_examples=60, deadline=None)
    def test_masking_invariance_property(self, params, mask_bits, seed):
        """Survivors' tokens are bit-identical under any mask of other groups."""
        sample = make_sample(make_rng(seed, 21))
        mask = {g for i, g in enumerate(DATA_GROUPS) if mask_bits & (1 << i)}
        if len(mask) == len(DATA_GROUPS):
            mask.pop()
        full, full_groups = tokenize(sample, set(), params)
        masked, masked_groups = tokenize(sample, mask, params)
        for j, g in enumerate(masked_groups):
            assert np.array_equal(masked[j], full[full_groups.index(g)])

    def test_batch_path_matches_sample_path(self, params):
        rng = make_rng(5, 20)
        channels = np.column_stack([
            rng.uniform(-25, -5, size=(7, 2)),
            rng.uniform(0, 1, size=(7, 10)),
            rng.uniform(-1, 1, size=(7, 1)),
        ])
        months = rng.integers(0, 12, size=7)
        batch_tokens, _ = tokenize_batch_fwd(params, channels, months, DATA_GROUPS)
        for i in range(7):
            values = {g: channels[i, GROUP_SLICE[g]] for g in DATA_GROUPS}
            sample = PixelSample(values=values, month=int(months[i]))
            tokens, _ = tokenize(sample, set(), params)
            # BLAS may pick different kernels for 1-row and B-row products, so
            # cross-path agreement is to rounding, not bit-exact; bit equality
            # is contracted within a path (fixed shapes), not across them.
            assert np.abs(tokens - batch_tokens[i]).max() < 1e-12

    def test_reserved_groups_are_embeddable_when_populated(self, params):
        sample = PixelSample(values={ChannelGroup.ERA5: np.array([0.3, 0.7])}, month=0)
        tokens, groups = tokenize(sample, set(), params)
        assert tokens.shape == (1, 128)
        assert groups == (ChannelGroup.ERA5,)


class TestEncodings:
    def test_pos_and_month_are_frozen(self, params):
        assert "pos_enc" in params.frozen
        assert "month_enc" in params.frozen

    def test_sinusoid_shape_and_range(self):
        t = sinusoid_table(10, 32)
        assert t.shape == (10, 32)
        assert np.abs(t).max() <= 1.0

    def test_position_indexed_by_canonical_slot(self, params):
        """Same values through two different groups differ only by encodings."""
        v = np.array([0.2, 0.4])
        t_s1 = tokenize(PixelSample({S1: v}, month=3), set(), params)[0][0]
        t_era5 = tokenize(PixelSample({ChannelGroup.ERA5: v}, month=3), set(), params)[0][0]
        slot_s1 = CANONICAL_ORDER.index(S1)
        slot_era5 = CANONICAL_ORDER.index(ChannelGroup.ERA5)
        lhs = t_s1 - params["pos_enc"][slot_s1] - params["group_enc"][slot_s1] \
            - v @ params["embed.S1"]
        rhs = t_era5 - params["pos_enc"][slot_era5] - params["group_enc"][slot_era5] \
            - v @ params["embed.ERA5"]
        assert np.allclose(lhs, rhs, atol=1e-12)  # both reduce to the month row


class TestNdvi:
    def test_equal_reflectance_is_zero(self):
        assert compute_ndvi(0.3, 0.3) == 0.0

    def test_hand_value(self):
        assert compute_ndvi(0.5, 0.25) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_zero_zero_convention(self):
        assert compute_ndvi(0.0, 0.0) == 0.0

    def test_negative_reflectance_raises(self):
        with pytest.raises(DataError):
            compute_ndvi(-0.1, 0.2)

    def test_vectorized(self):
        out = compute_ndvi(np.array([0.5, 0.0]), np.array([0.25, 0.0]))
        assert out[0] == pytest.approx(1.0 / 3.0)
        assert out[1] == 0.0

    @given(b8=st.floats(0, 1), b4=st.floats(0, 1))
    @settings(max_examples=60, deadline=None)
    def test_range_property(self, b8, b4):
        assert -1.0 <= compute_ndvi(b8, b4) <= 1.0


class TestNormalization:
    def make_stats(self, rng):
        return NormStats(rng.normal(size=13), rng.uniform(0.5, 2.0, size=13))

    def test_mean_maps_to_zero_and_unit_shift(self):
        stats = NormStats(np.full(13, 3.0), np.full(13, 2.0))
        sample = PixelSample({S1: np.array([3.0, 5.0])}, month=0)
        out = normalize(sample, stats)
        assert np.allclose(out.values[S1], [0.0, 1.0])

    def test_round_trip(self):
        rng = make_rng(6, 20)
        stats = self.make_stats(rng)
        sample = make_sample(rng)
        back = denormalize(normalize(sample, stats), stats)
        for g in DATA_GROUPS:
            assert np.abs(back.values[g] - sample.values[g]).max() < 1e-12
        assert back.month == sample.month and back.present == sample.present

    def test_zero_std_rejected(self):
        with pytest.raises(ConfigError):
            NormStats(np.zeros(13), np.zeros(13))

    def test_json_round_trip(self):
        rng = make_rng(7, 20)
        stats = self.make_stats(rng)
        loaded = NormStats.from_json(stats.to_json())
        assert np.array_equal(loaded.means, stats.means)
        assert np.array_equal(loaded.stds, stats.stds)

    def test_json_uses_channel_names(self):
        import json
        stats = NormStats(np.arange(13.0), np.ones(13))
        obj = json.loads(stats.to_json())
        assert set(obj) == set(DATA_CHANNELS)
        assert obj["VV"] == {"mean": 0.0, "std": 1.0}


class TestPixelSample:
    def test_validate_raw_accepts_good_sample(self):
        make_sample(make_rng(8, 20)).validate_raw()

    def test_ndvi_out_of_range_rejected(self):
        sample = PixelSample({NDVI: np.array([1.5])}, month=0)
        with pytest.raises(DataError):
            sample.validate_raw()

    def test_bad_month_rejected(self):
        sample = PixelSample({NDVI: np.array([0.5])}, month=12)
        with pytest.raises(DataError):
            sample.validate_raw()
