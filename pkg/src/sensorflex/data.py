"""Chip file format, dataset manifest, curation filters, pixel extraction,
and a synthetic flood-chip generator for desk-scale experiments.

Chip files (little-endian): magic "SFXC", u32 version, u32 JSON length, JSON
meta {location, s1_date, s2_date, split, height, width}, then float32 planes
VV, VH, B2..B12 and an int8 label plane. Write -> read round-trips bit-exactly.
"""

import csv
import json
import struct
from dataclasses import dataclass
from datetime import date

import numpy as np

from .channels import DATA_CHANNELS, DATA_GROUPS, S2_BANDS
from .errors import DataError
from .rng import STREAM_SYNTH, make_rng
from .tokenizer import GROUP_SLICE, PixelSample, compute_ndvi

CHIP_MAGIC = b"SFXC"
CHIP_VERSION = 1

LABEL_NO_DATA = -1
LABEL_NON_FLOOD = 0
LABEL_FLOOD = 1


@dataclass
class ChipMeta:
    location: str
    s1_date: str
    s2_date: str
    split: str  # train | val | test


@dataclass
class Chip:
    s1: np.ndarray      # [H, W, 2] float32, backscatter in dB
    s2: np.ndarray      # [H, W, 10] float32, reflectance in [0, 1]
    labels: np.ndarray  # [H, W] int8 in {-1, 0, 1}
    meta: ChipMeta

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    def validate(self):
        h, w = self.labels.shape
        if self.s1.shape != (h, w, 2) or self.s2.shape != (h, w, len(S2_BANDS)):
            raise DataError(f"chip plane shapes disagree: s1 {self.s1.shape}, s2 {self.s2.shape}")
        if not np.isin(self.labels, (-1, 0, 1)).all():
            raise DataError("labels outside {-1, 0, 1}")
        if (self.s2 < 0).any():
            raise DataError("negative S2 reflectance")

    def flood_ratio(self) -> float:
        flood = int((self.labels == LABEL_FLOOD).sum())
        valid = int((self.labels != LABEL_NO_DATA).sum())
        return flood / valid if valid else 0.0


def write_chip(path, chip: Chip):
    chip.validate()
    meta = {"location": chip.meta.location, "s1_date": chip.meta.s1_date,
            "s2_date": chip.meta.s2_date, "split": chip.meta.split,
            "height": chip.height, "width": chip.width}
    with open(path, "wb") as f:
        f.write(CHIP_MAGIC)
        f.write(struct.pack("<I", CHIP_VERSION))
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for c in range(2):
            f.write(np.ascontiguousarray(chip.s1[:, :, c], dtype="<f4").tobytes())
        for c in range(len(S2_BANDS)):
            f.write(np.ascontiguousarray(chip.s2[:, :, c], dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(chip.labels, dtype="<i1").tobytes())


def read_chip(path) -> Chip:
    with open(path, "rb") as f:
        if f.read(4) != CHIP_MAGIC:
            raise DataError(f"{path}: not a chip file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHIP_VERSION:
            raise DataError(f"{path}: unsupported chip version {version}")
        (jlen,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(jlen).decode("utf-8"))
        h, w = meta["height"], meta["width"]

        def plane(dtype, nbytes):
            return np.frombuffer(f.read(h * w * nbytes), dtype=dtype).reshape(h, w)

        s1 = np.stack([plane("<f4", 4) for _ in range(2)], axis=-1)
        s2 = np.stack([plane("<f4", 4) for _ in range(len(S2_BANDS))], axis=-1)
        labels = np.array(plane("<i1", 1))
    chip = Chip(s1=np.array(s1), s2=np.array(s2), labels=labels,
                meta=ChipMeta(meta["location"], meta["s1_date"], meta["s2_date"], meta["split"]))
    chip.validate()
    return chip


# ---------------------------------------------------------------------------
# manifest

@dataclass
class ManifestRecord:
    path: str
    location: str
    s1_date: str
    s2_date: str
    split: str
    flood_ratio: float
    label_source: str = "hand"  # optional 7th CSV column; "hand" when absent


MANIFEST_COLUMNS = ("path", "location", "s1_date", "s2_date", "split", "flood_ratio")


def write_manifest(path, records):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(MANIFEST_COLUMNS)
        for r in records:
            w.writerow([r.path, r.location, r.s1_date, r.s2_date, r.split,
                        f"{r.flood_ratio:.6f}"])


def read_manifest(path):
    records = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: manifest missing columns {sorted(missing)}")
        for row in reader:
            records.append(ManifestRecord(
                path=row["path"], location=row["location"], s1_date=row["s1_date"],
                s2_date=row["s2_date"], split=row["split"],
                flood_ratio=float(row["flood_ratio"]),
                label_source=row.get("label_source") or "hand"))
    return records


def split_counts(records) -> dict:
    out = {"train": 0, "val": 0, "test": 0}
    for r in records:
        out[r.split] = out.get(r.split, 0) + 1
    return out


def split_locations(records, split: str) -> set:
    return {r.location for r in records if r.split == split}


# ---------------------------------------------------------------------------
# curation filters

def _parse_date(s: str) -> date:
    try:
        return date.fromisoformat(s)
    except ValueError as e:
        raise DataError(f"unparsable date {s!r}") from e


def filter_temporal(records, max_gap_days: int = 1):
    """Keep records whose S1/S2 acquisitions differ by at most one day."""
    return [r for r in records
            if abs((_parse_date(r.s1_date) - _parse_date(r.s2_date)).days) <= max_gap_days]


def filter_hand_label(records):
    return [r for r in records if r.label_source == "hand"]


def filter_flood_ratio(records, min_ratio: float = 0.05):
    """Keep records at or above the minimum flood-pixel ratio (boundary kept)."""
    return [r for r in records if r.flood_ratio >= min_ratio]


def curate(records, max_gap_days: int = 1, min_ratio: float = 0.05):
    """Full curation chain; the filters are independent predicates."""
    return filter_flood_ratio(filter_hand_label(filter_temporal(records, max_gap_days)),
                              min_ratio)


# ---------------------------------------------------------------------------
# pixel extraction

def month_from_meta(meta: ChipMeta) -> int:
    d = meta.s2_date or meta.s1_date
    return _parse_date(d).month - 1


@dataclass
class PackedPixels:
    """Flat pixel store: [N, 13] float64 channel matrix in DATA_CHANNELS order."""

    channels: np.ndarray
    months: np.ndarray  # [N] int64
    labels: np.ndarray  # [N] int8

    def __len__(self):
        return self.labels.shape[0]

    def select(self, idx) -> "PackedPixels":
        return PackedPixels(self.channels[idx], self.months[idx], self.labels[idx])


def extract_packed(chips) -> PackedPixels:
    """All pixels of the given chips, in row-major order per chip."""
    blocks, months, labels = [], [], []
    for chip in chips:
        n = chip.height * chip.width
        block = np.empty((n, len(DATA_CHANNELS)))
        block[:, 0:2] = chip.s1.reshape(n, 2).astype(np.float64)
        s2 = chip.s2.reshape(n, len(S2_BANDS)).astype(np.float64)
        block[:, 2:12] = s2
        block[:, 12] = compute_ndvi(s2[:, S2_BANDS.index("B8")], s2[:, S2_BANDS.index("B4")])
        blocks.append(block)
        months.append(np.full(n, month_from_meta(chip.meta), dtype=np.int64))
        labels.append(chip.labels.reshape(n).astype(np.int8))
    return PackedPixels(np.concatenate(blocks), np.concatenate(months), np.concatenate(labels))


def extract_pixels(chip: Chip):
    """Per-pixel (PixelSample, label) list; one entry per pixel, labels passed
    through including no-data."""
    packed = extract_packed([chip])
    present = frozenset(DATA_GROUPS)
    out = []
    for i in range(len(packed)):
        values = {g: packed.channels[i, GROUP_SLICE[g]].copy() for g in DATA_GROUPS}
        out.append((PixelSample(values=values, month=int(packed.months[i]), present=present),
                    int(packed.labels[i])))
    return out


# ---------------------------------------------------------------------------
# synthetic flood chips

# Per-channel background (land) and fully-flooded means; flood pixels move
# from land toward flood proportionally to a smooth wetness field in [0.5, 1],
# so shallow margins are genuinely ambiguous in every sensor.
LAND_MEANS = {
    "VV": -8.0, "VH": -14.0,
    "B2": 0.06, "B3": 0.08, "B4": 0.10, "B5": 0.15, "B6": 0.22, "B7": 0.26,
    "B8": 0.34, "B8A": 0.36, "B11": 0.26, "B12": 0.18,
}
FLOOD_MEANS = {
    "VV": -18.0, "VH": -25.0,
    "B2": 0.070, "B3": 0.075, "B4": 0.085, "B5": 0.070, "B6": 0.060, "B7": 0.055,
    "B8": 0.050, "B8A": 0.050, "B11": 0.035, "B12": 0.025,
}
# Noise scales at noise=1. SAR is deliberately the weaker sensor.
S1_NOISE = 6.0
S2_NOISE = 0.035
CLOUD_MEANS = {
    "B2": 0.75, "B3": 0.74, "B4": 0.73, "B5": 0.72, "B6": 0.70, "B7": 0.69,
    "B8": 0.68, "B8A": 0.67, "B11": 0.45, "B12": 0.35,
}

# (location, s1_date, s2_date) pools; the test location never appears in
# train/val so the split stays geographically disjoint.
TRAINVAL_SITES = (
    ("riverton", "2020-06-15", "2020-06-15"),
    ("lakeshore", "2019-09-03", "2019-09-04"),
    ("deltaport", "2021-03-21", "2021-03-21"),
)
TEST_SITE = ("farfield", "2020-07-10", "2020-07-10")


def _smooth_field(rng, size: int, res: int) -> np.ndarray:
    """Bilinear upsample of low-resolution Gaussian noise: smooth blobs."""
    lr = rng.standard_normal((res + 1, res + 1))
    t = np.linspace(0.0, res, size)
    i0 = np.minimum(t.astype(np.int64), res - 1)
    f = t - i0
    rows = lr[i0] * (1.0 - f)[:, None] + lr[i0 + 1] * f[:, None]
    return rows[:, i0] * (1.0 - f)[None, :] + rows[:, i0 + 1] * f[None, :]


def synth_chip(seed: int, index: int, size: int = 64, flood_frac: float = 0.2,
               noise: float = 1.0, cloud_frac: float = 0.0, label_bias: bool = False,
               meta: ChipMeta | None = None) -> Chip:
    """One procedural chip; bytewise deterministic in (seed, index)."""
    if size < 16:
        raise DataError(f"chip size {size} below minimum 16")
    rng = make_rng(seed, STREAM_SYNTH, index)
    field = _smooth_field(rng, size, max(2, size // 8))
    thresh = np.quantile(field, 1.0 - flood_frac) if flood_frac > 0 else np.inf
    flood = field > thresh
    spread = max(field.max() - thresh, 1e-9)
    wetness = np.where(flood, 0.5 + 0.5 * np.clip((field - thresh) / spread, 0.0, 1.0), 0.0)

    planes = {}
    for name in ("VV", "VH") + S2_BANDS:
        sigma = (S1_NOISE if name in ("VV", "VH") else S2_NOISE) * noise
        base = LAND_MEANS[name] + (FLOOD_MEANS[name] - LAND_MEANS[name]) * wetness
        planes[name] = base + sigma * rng.standard_normal((size, size))

    labels = np.where(flood, LABEL_FLOOD, LABEL_NON_FLOOD).astype(np.int8)

    if cloud_frac > 0:
        cfield = _smooth_field(rng, size, max(2, size // 8))
        cloud = cfield > np.quantile(cfield, 1.0 - cloud_frac)
        for name in S2_BANDS:
            cloudy = CLOUD_MEANS[name] + 0.02 * noise * rng.standard_normal((size, size))
            planes[name] = np.where(cloud, cloudy, planes[name])
        if label_bias:
            labels[cloud & flood] = LABEL_NO_DATA

    s1 = np.stack([planes["VV"], planes["VH"]], axis=-1).astype(np.float32)
    s2 = np.stack([np.clip(planes[b], 0.0, 1.0) for b in S2_BANDS], axis=-1).astype(np.float32)
    if meta is None:
        meta = ChipMeta(*TRAINVAL_SITES[index % len(TRAINVAL_SITES)], split="train")
    return Chip(s1=s1, s2=s2, labels=labels, meta=meta)


def default_split_counts(n_chips: int) -> tuple:
    n_test = max(1, n_chips // 5)
    n_val = max(1, n_chips // 5)
    return n_chips - n_val - n_test, n_val, n_test


def synth_generate(seed: int, n_chips: int, size: int = 64, flood_frac: float = 0.2,
                   noise: float = 1.0, cloud_frac: float = 0.0, label_bias: bool = False,
                   split_counts_: tuple | None = None):
    """Deterministic dataset: list of chips plus manifest records.

    Test chips come from a location disjoint from every train/val location.
    Paths in the records are relative file names chip_NNN.sfxc.
    """
    n_train, n_val, n_test = split_counts_ or default_split_counts(n_chips)
    if n_train + n_val + n_test != n_chips or min(n_train, n_val, n_test) < 0:
        raise DataError(f"split counts {split_counts_} do not sum to {n_chips}")
    chips, records = [], []
    for i in range(n_chips):
        if i < n_train:
            split = "train"
        elif i < n_train + n_val:
            split = "val"
        else:
            split = "test"
        if split == "test":
            loc, d1, d2 = TEST_SITE
        else:
            loc, d1, d2 = TRAINVAL_SITES[i % len(TRAINVAL_SITES)]
        chip = synth_chip(seed, i, size=size, flood_frac=flood_frac, noise=noise,
                          cloud_frac=cloud_frac, label_bias=label_bias,
                          meta=ChipMeta(loc, d1, d2, split))
        chips.append(chip)
        records.append(ManifestRecord(
            path=f"chip_{i:03d}.sfxc", location=loc, s1_date=d1, s2_date=d2,
            split=split, flood_ratio=chip.flood_ratio()))
    return chips, records
