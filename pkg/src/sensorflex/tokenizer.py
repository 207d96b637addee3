"""Pixel values -> token sequence.

One token per present channel group: a per-group linear embedding of the raw
channel values plus positional, month, and channel-group encodings. Masking
drops a group's token entirely; the positional encoding is indexed by the
group's canonical slot rather than by position in the compacted sequence, so
surviving tokens are bit-identical no matter which other groups are masked.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .channels import (
    CANONICAL_ORDER,
    DATA_CHANNELS,
    DATA_GROUPS,
    GROUP_CHANNELS,
    ChannelGroup,
    group_slot,
    n_channels,
    sort_groups,
)
from .errors import ConfigError, DataError, EmptyInputError
from .params import ParamStore

# index of each data group's channels inside the packed 13-channel layout
GROUP_SLICE = {}
_i = 0
for _g in DATA_GROUPS:
    GROUP_SLICE[_g] = slice(_i, _i + n_channels(_g))
    _i += n_channels(_g)
assert _i == len(DATA_CHANNELS)


@dataclass
class PixelSample:
    """One pixel's channel values for a single timestep.

    values holds raw physical units: S1 backscatter in dB, S2 reflectance in
    [0, 1], NDVI in [-1, 1]. present lists the groups carrying data.
    """

    values: dict
    month: int
    present: frozenset = field(default=None)

    def __post_init__(self):
        if self.present is None:
            self.present = frozenset(self.values)

    def validate_raw(self):
        """Check invariants that hold for physical-unit (un-normalized) samples."""
        if not 0 <= self.month <= 11:
            raise DataError(f"month {self.month} outside 0..11")
        for g in sort_groups(self.present):
            if g not in self.values:
                raise DataError(f"group {g.value} marked present but has no values")
            v = np.asarray(self.values[g])
            if v.shape != (n_channels(g),):
                raise DataError(
                    f"group {g.value}: expected {n_channels(g)} channels, got {v.shape}")
        if ChannelGroup.NDVI in self.present:
            ndvi = float(np.asarray(self.values[ChannelGroup.NDVI])[0])
            if not -1.0 <= ndvi <= 1.0:
                raise DataError(f"NDVI {ndvi} outside [-1, 1]")


# ---------------------------------------------------------------------------
# encodings

def sinusoid_table(n_positions: int, d_model: int) -> np.ndarray:
    """Fixed sine/cosine table, one row per position."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (i // 2) / d_model)
    table = np.zeros((n_positions, d_model))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


def build_encoding_params(store: ParamStore, d_model: int, rng: np.random.Generator):
    """Register embedding weights and encodings, in canonical group order.

    Positional and month encodings are frozen: they never receive gradients
    and the optimizer never touches them.
    """
    for g in CANONICAL_ORDER:
        c = n_channels(g)
        bound = 1.0 / np.sqrt(c)
        store.add(f"embed.{g.value}", rng.uniform(-bound, bound, size=(c, d_model)))
    bound = 1.0 / np.sqrt(d_model)
    store.add("group_enc", rng.uniform(-bound, bound, size=(len(CANONICAL_ORDER), d_model)))
    store.add("pos_enc", sinusoid_table(len(CANONICAL_ORDER), d_model), frozen=True)
    store.add("month_enc", sinusoid_table(12, d_model), frozen=True)


# ---------------------------------------------------------------------------
# tokenization

def _embed_groups(params: ParamStore, values_by_group: dict, months: np.ndarray,
                  groups: tuple) -> tuple:
    """Shared inner routine: values_by_group[g] is [B, c_g], months is [B].

    Returns (tokens [B, n_groups, d_model], cache for the backward pass).
    Each token is computed independently of the other groups, which is what
    makes masking invariance exact.
    """
    d_model = params["group_enc"].shape[1]
    B = months.shape[0]
    tokens = np.empty((B, len(groups), d_model))
    month_rows = params["month_enc"][months]
    cache = []
    for j, g in enumerate(groups):
        v = values_by_group[g]
        if v.shape != (B, n_channels(g)):
            raise DataError(f"group {g.value}: value block shape {v.shape} != ({B}, {n_channels(g)})")
        w = params[f"embed.{g.value}"]
        tokens[:, j, :] = (v @ w
                           + params["pos_enc"][group_slot(g)]
                           + params["group_enc"][group_slot(g)]
                           + month_rows)
        cache.append((g, v))
    return tokens, (cache, months)


def _embed_groups_bwd(params: ParamStore, grad_tokens: np.ndarray, cache):
    """Accumulate gradients into embed weights and group encodings.

    pos_enc / month_enc are frozen; ParamStore.accumulate drops their grads.
    """
    per_group, months = cache
    for j, (g, v) in enumerate(per_group):
        gj = grad_tokens[:, j, :]
        params.accumulate(f"embed.{g.value}", v.T @ gj)
        genc = np.zeros_like(params["group_enc"])
        genc[group_slot(g)] = gj.sum(axis=0)
        params.accumulate("group_enc", genc)


def surviving_groups(present, mask) -> tuple:
    surv = sort_groups(set(present) - set(mask))
    if not surv:
        raise EmptyInputError("every channel group was masked; no tokens to build")
    return surv


def tokenize(sample: PixelSample, mask, params: ParamStore) -> tuple:
    """Token sequence for one pixel. Returns (tokens [n, d_model], groups).

    Groups in `mask` contribute no token; the sequence shrinks rather than
    leaving a placeholder.
    """
    groups = surviving_groups(sample.present, mask)
    values = {g: np.asarray(sample.values[g], dtype=np.float64).reshape(1, -1)
              for g in groups}
    months = np.asarray([sample.month])
    tokens, _ = _embed_groups(params, values, months, groups)
    return tokens[0], groups


def tokenize_batch_fwd(params: ParamStore, channels: np.ndarray, months: np.ndarray,
                       groups: tuple) -> tuple:
    """Batched tokenization from a packed [B, 13] channel matrix."""
    values = {g: np.ascontiguousarray(channels[:, GROUP_SLICE[g]]) for g in groups}
    return _embed_groups(params, values, months, groups)


tokenize_batch_bwd = _embed_groups_bwd


# ---------------------------------------------------------------------------
# NDVI

def compute_ndvi(b8, b4):
    """(NIR - Red) / (NIR + Red); 0 where both reflectances are 0."""
    b8 = np.asarray(b8, dtype=np.float64)
    b4 = np.asarray(b4, dtype=np.float64)
    if (b8 < 0).any() or (b4 < 0).any():
        raise DataError("negative reflectance in NDVI input")
    denom = b8 + b4
    out = np.divide(b8 - b4, denom, out=np.zeros_like(denom), where=denom != 0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# normalization

class NormStats:
    """Per-channel standardization constants over the 13 data channels."""

    def __init__(self, means: np.ndarray, stds: np.ndarray):
        means = np.asarray(means, dtype=np.float64)
        stds = np.asarray(stds, dtype=np.float64)
        if means.shape != (len(DATA_CHANNELS),) or stds.shape != (len(DATA_CHANNELS),):
            raise ConfigError(f"stats must cover all {len(DATA_CHANNELS)} channels")
        if (stds <= 0).any():
            bad = [DATA_CHANNELS[i] for i in np.where(stds <= 0)[0]]
            raise ConfigError(f"non-positive std for channels {bad}")
        self.means = means
        self.stds = stds

    @classmethod
    def from_channels(cls, channels: np.ndarray) -> "NormStats":
        """Compute from a packed [N, 13] matrix (training split only)."""
        ch = np.asarray(channels, dtype=np.float64)
        return cls(ch.mean(axis=0), ch.std(axis=0))

    def to_json(self) -> str:
        obj = {name: {"mean": self.means[i], "std": self.stds[i]}
               for i, name in enumerate(DATA_CHANNELS)}
        return json.dumps(obj, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        obj = json.loads(text)
        try:
            means = [obj[name]["mean"] for name in DATA_CHANNELS]
            stds = [obj[name]["std"] for name in DATA_CHANNELS]
        except KeyError as e:
            raise DataError(f"stats file missing channel {e}") from e
        return cls(np.array(means), np.array(stds))

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path) -> "NormStats":
        with open(path) as f:
            return cls.from_json(f.read())


def normalize_channels(channels: np.ndarray, stats: NormStats) -> np.ndarray:
    """(x - mean) / std on a packed [.., 13] matrix, in float64."""
    return (np.asarray(channels, dtype=np.float64) - stats.means) / stats.stds


def _map_sample(sample: PixelSample, stats: NormStats, forward: bool) -> PixelSample:
    out = {}
    for g in sort_groups(sample.present):
        if g in GROUP_SLICE:
            sl = GROUP_SLICE[g]
            v = np.asarray(sample.values[g], dtype=np.float64)
            if forward:
                out[g] = (v - stats.means[sl]) / stats.stds[sl]
            else:
                out[g] = v * stats.stds[sl] + stats.means[sl]
        else:
            out[g] = np.asarray(sample.values[g], dtype=np.float64)
    return PixelSample(values=out, month=sample.month, present=sample.present)


def normalize(sample: PixelSample, stats: NormStats) -> PixelSample:
    """Standardize a sample's channels; month and presence are unchanged."""
    return _map_sample(sample, stats, forward=True)


def denormalize(sample: PixelSample, stats: NormStats) -> PixelSample:
    return _map_sample(sample, stats, forward=False)
