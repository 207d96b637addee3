"""Confusion counts, segmentation metrics, and the three-scenario harness.

Pixels labeled no-data are never scored. Metrics with a zero denominator are
defined as 0 and emit a MetricWarning so degenerate slices are visible.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channels import DATA_GROUPS, ChannelGroup, n_channels, sort_groups
from .data import LABEL_NO_DATA, extract_packed
from .errors import EmptyInputError

N_DATA_BANDS = 13


class MetricWarning(UserWarning):
    pass


@dataclass
class ConfusionCounts:
    n_tp: int = 0
    n_fp: int = 0
    n_tn: int = 0
    n_fn: int = 0

    def accumulate(self, pred_flood: bool, label: int) -> "ConfusionCounts":
        """Score one pixel; label -1 leaves the counts unchanged."""
        if label == LABEL_NO_DATA:
            return self
        if pred_flood:
            if label == 1:
                self.n_tp += 1
            else:
                self.n_fp += 1
        else:
            if label == 1:
                self.n_fn += 1
            else:
                self.n_tn += 1
        return self

    def update_batch(self, preds: np.ndarray, labels: np.ndarray):
        """Vectorized accumulate over boolean predictions and {-1,0,1} labels."""
        valid = labels != LABEL_NO_DATA
        pos = labels == 1
        self.n_tp += int(np.count_nonzero(valid & preds & pos))
        self.n_fp += int(np.count_nonzero(valid & preds & ~pos))
        self.n_fn += int(np.count_nonzero(valid & ~preds & pos))
        self.n_tn += int(np.count_nonzero(valid & ~preds & ~pos))

    def merge(self, other: "ConfusionCounts") -> "ConfusionCounts":
        self.n_tp += other.n_tp
        self.n_fp += other.n_fp
        self.n_tn += other.n_tn
        self.n_fn += other.n_fn
        return self

    def total(self) -> int:
        return self.n_tp + self.n_fp + self.n_tn + self.n_fn

    def as_dict(self) -> dict:
        return {"n_tp": self.n_tp, "n_fp": self.n_fp, "n_tn": self.n_tn, "n_fn": self.n_fn}


def _ratio(num: int, den: int, what: str) -> float:
    if den == 0:
        warnings.warn(f"zero denominator for {what}; defining it as 0", MetricWarning)
        return 0.0
    return num / den


def miou(c: ConfusionCounts) -> float:
    """Mean over the two classes of intersection-over-union."""
    iou_flood = _ratio(c.n_tp, c.n_tp + c.n_fp + c.n_fn, "flood IoU")
    iou_non = _ratio(c.n_tn, c.n_tn + c.n_fp + c.n_fn, "non-flood IoU")
    return 0.5 * (iou_flood + iou_non)


def precision_recall_f1(c: ConfusionCounts) -> tuple:
    precision = _ratio(c.n_tp, c.n_tp + c.n_fp, "precision")
    recall = _ratio(c.n_tp, c.n_tp + c.n_fn, "recall")
    f1 = _ratio(2 * c.n_tp, 2 * c.n_tp + c.n_fp + c.n_fn, "F1")
    return precision, recall, f1


# ---------------------------------------------------------------------------
# scenarios

@dataclass(frozen=True)
class Scenario:
    name: str
    masked_groups: frozenset = field(default_factory=frozenset)

    @property
    def n_bands(self) -> int:
        masked = sum(n_channels(g) for g in sort_groups(self.masked_groups)
                     if g in DATA_GROUPS)
        return N_DATA_BANDS - masked


SAR_ONLY = Scenario("SAR_only", frozenset({
    ChannelGroup.S2_RGB, ChannelGroup.S2_RED_EDGE, ChannelGroup.S2_NIR,
    ChannelGroup.S2_SWIR, ChannelGroup.NDVI}))
MS_ONLY = Scenario("MS_only", frozenset({ChannelGroup.S1}))
MS_SAR = Scenario("MS_SAR", frozenset())

SCENARIOS = {"sar": SAR_ONLY, "ms": MS_ONLY, "fused": MS_SAR}

BAND_COMMENT = ("band counts include the derived NDVI channel; "
                "excluding NDVI they read 10 (MS-only) and 12 (MS+SAR)")


# ---------------------------------------------------------------------------
# evaluation harness

def evaluate_scenario(model, chips, scenario: Scenario | None = None,
                      threshold: float = 0.5, dump_dir=None, chip_names=None,
                      shard_size: int = 16384) -> dict:
    """Score a model over test chips under one masking scenario.

    `model` needs predict_probs(channels [B,13], months [B], masked_groups).
    Passing scenario=None is identical to the un-masked MS_SAR scenario.
    """
    scenario = scenario or MS_SAR
    if not set(DATA_GROUPS) - set(scenario.masked_groups):
        raise EmptyInputError(f"scenario {scenario.name} masks every populated group")
    counts = ConfusionCounts()
    for i, chip in enumerate(chips):
        packed = extract_packed([chip])
        preds = np.empty(len(packed), dtype=bool)
        for lo in range(0, len(packed), shard_size):
            sl = slice(lo, min(lo + shard_size, len(packed)))
            probs = model.predict_probs(packed.channels[sl], packed.months[sl],
                                        scenario.masked_groups)
            preds[sl] = probs >= threshold
        counts.update_batch(preds, packed.labels)
        if dump_dir is not None:
            name = chip_names[i] if chip_names else f"chip_{i:03d}"
            render_map(preds.reshape(chip.height, chip.width), chip.labels,
                       f"{dump_dir}/{name}.png")
    return metrics_report(counts, scenario)


def metrics_report(counts: ConfusionCounts, scenario: Scenario) -> dict:
    precision, recall, f1 = precision_recall_f1(counts)
    return {
        "scenario": scenario.name,
        "n_bands": scenario.n_bands,
        "miou": miou(counts),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "counts": counts.as_dict(),
        "comment": BAND_COMMENT,
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# diagnostic prediction maps

MAP_FLOOD = (0, 0, 255)
MAP_NON_FLOOD = (255, 255, 255)
MAP_NO_DATA = (128, 128, 128)


def render_map(preds: np.ndarray, labels: np.ndarray, path=None) -> np.ndarray:
    """RGB prediction map: flood blue, non-flood white, no-data gray."""
    h, w = preds.shape
    rgb = np.empty((h, w, 3), dtype=np.uint8)
    rgb[:] = MAP_NON_FLOOD
    rgb[preds] = MAP_FLOOD
    rgb[labels == LABEL_NO_DATA] = MAP_NO_DATA
    if path is not None:
        from PIL import Image
        Image.fromarray(rgb).save(path)
    return rgb
