"""End-to-end fine-tuning loop over pixel batches.

Training always runs on complete sensor-fused pixels; masking is an
evaluation-time device. Batches are processed in fixed-size micro-shards and
shard gradients are summed in shard order, so the worker thread count never
changes the result: any --threads value reproduces the single-threaded run
bit for bit.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channels import DATA_GROUPS
from .data import PackedPixels
from .errors import ConfigError, DataError
from .evaluation import ConfusionCounts, miou, precision_recall_f1
from .head import FocalLossConfig, batch_focal
from .model import ModelConfig, backward_logits, build_params, forward_logits
from .optim import AdamW
from .params import ParamStore
from .rng import STREAM_SHUFFLE, make_rng
from .tokenizer import NormStats, normalize_channels

SHARD_SIZE = 1024  # fixed micro-shard; must not depend on the thread count


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 4096
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    max_epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0
    loss: FocalLossConfig = field(default_factory=FocalLossConfig)
    threads: int = 1

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")


@dataclass
class LogRow:
    epoch: int
    split: str
    loss: float
    precision: float
    recall: float
    f1: float
    miou: float


@dataclass
class TrainResult:
    params: ParamStore       # best-validation-F1 weights
    stats: NormStats
    log: list
    best_epoch: int
    best_f1: float
    epochs_run: int


def shuffle_batches(pixels, batch_size: int, seed: int, epoch: int):
    """Deterministic per-(seed, epoch) permutation; the last short batch is kept."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(pixels)
    perm = make_rng(seed, STREAM_SHUFFLE, epoch).permutation(n)
    for lo in range(0, n, batch_size):
        idx = perm[lo:lo + batch_size]
        if isinstance(pixels, (np.ndarray, PackedPixels)):
            yield pixels[idx] if isinstance(pixels, np.ndarray) else pixels.select(idx)
        else:
            yield [pixels[i] for i in idx]


def _run_shards(fn, n_items: int, threads: int):
    """Apply fn(lo, hi) over fixed shards, returning results in shard order."""
    bounds = [(lo, min(lo + SHARD_SIZE, n_items)) for lo in range(0, n_items, SHARD_SIZE)]
    if threads <= 1 or len(bounds) == 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, lo, hi) for lo, hi in bounds]
        return [f.result() for f in futures]


def _merge_grads(params: ParamStore, shadows):
    for name in params.names():
        for sh in shadows:
            g = sh.grads[name]
            if g is not None:
                params.accumulate(name, g)


def batch_forward_backward(params: ParamStore, model_cfg: ModelConfig,
                           stats: NormStats, batch: PackedPixels,
                           loss_cfg: FocalLossConfig, threads: int = 1,
                           backward: bool = True, groups: tuple = DATA_GROUPS) -> tuple:
    """One fused batch through the model; returns (mean loss, flood preds).

    Gradients (when backward) are accumulated into params in shard order.
    """
    n = len(batch)
    labels01 = batch.labels.astype(np.float64)

    def work(lo, hi):
        sink = params.shadow() if backward else params
        normed = normalize_channels(batch.channels[lo:hi], stats)
        logits, caches = forward_logits(sink, model_cfg, normed, batch.months[lo:hi],
                                        groups, check=False)
        loss, dlogits = batch_focal(logits, labels01[lo:hi], loss_cfg)
        if backward:
            backward_logits(sink, model_cfg, dlogits * (hi - lo) / n, caches)
        return loss * (hi - lo), logits >= 0.0, (sink if backward else None)

    results = _run_shards(work, n, threads)
    if backward:
        _merge_grads(params, [r[2] for r in results])
    total_loss = sum(r[0] for r in results) / n
    preds = np.concatenate([r[1] for r in results])
    return total_loss, preds


def _epoch_row(epoch, split, loss, counts) -> LogRow:
    p, r, f1 = precision_recall_f1(counts)
    return LogRow(epoch, split, loss, p, r, f1, miou(counts))


def evaluate_split(params, model_cfg, stats, pixels: PackedPixels,
                   loss_cfg, threads: int = 1, epoch: int = 0, split: str = "val",
                   groups: tuple = DATA_GROUPS) -> LogRow:
    """Forward-only pass: loss over labeled pixels plus confusion metrics."""
    labeled = pixels.select(pixels.labels >= 0)
    loss, preds = batch_forward_backward(params, model_cfg, stats, labeled, loss_cfg,
                                         threads=threads, backward=False, groups=groups)
    counts = ConfusionCounts()
    counts.update_batch(preds, labeled.labels)
    return _epoch_row(epoch, split, loss, counts)


def train(train_pixels: PackedPixels, val_pixels: PackedPixels,
          model_cfg: ModelConfig, cfg: TrainConfig,
          init_params: ParamStore | None = None, start_epoch: int = 0,
          verbose: bool = False, groups: tuple = DATA_GROUPS) -> TrainResult:
    """Fine-tune on fused pixels, select the best validation-F1 checkpoint.

    No-data pixels are dropped from the training loss. Runs are bit-for-bit
    reproducible for a fixed seed.
    """
    if len(train_pixels) == 0 or len(val_pixels) == 0:
        raise DataError("train and validation sets must be non-empty")
    train_labeled = train_pixels.select(train_pixels.labels >= 0)
    if len(train_labeled) == 0 or not (train_labeled.labels == 1).any():
        raise ConfigError("training data contains no flood pixels; loss is degenerate")

    stats = NormStats.from_channels(train_labeled.channels)
    params = init_params if init_params is not None else build_params(model_cfg)
    opt = AdamW(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                eps=cfg.eps, weight_decay=cfg.weight_decay)

    log = []
    best_f1 = -1.0
    best_epoch = start_epoch
    best_params = params.copy()
    epochs_run = start_epoch

    for epoch in range(start_epoch + 1, start_epoch + cfg.max_epochs + 1):
        t0 = time.time()
        epoch_loss = 0.0
        counts = ConfusionCounts()
        for batch in shuffle_batches(train_labeled, cfg.batch_size, cfg.seed, epoch):
            loss, preds = batch_forward_backward(params, model_cfg, stats, batch,
                                                 cfg.loss, threads=cfg.threads,
                                                 groups=groups)
            opt.step()
            epoch_loss += loss * len(batch)
            counts.update_batch(preds, batch.labels)
        epoch_loss /= len(train_labeled)
        log.append(_epoch_row(epoch, "train", epoch_loss, counts))

        val_row = evaluate_split(params, model_cfg, stats, val_pixels, cfg.loss,
                                 threads=cfg.threads, epoch=epoch, split="val",
                                 groups=groups)
        log.append(val_row)
        epochs_run = epoch
        if verbose:
            print(f"epoch {epoch}: train loss {epoch_loss:.5f} "
                  f"val f1 {val_row.f1:.4f} ({time.time() - t0:.1f}s)")

        if val_row.f1 > best_f1:
            best_f1 = val_row.f1
            best_epoch = epoch
            best_params = params.copy()
        elif epoch - best_epoch >= cfg.early_stop_patience:
            break

    return TrainResult(params=best_params, stats=stats, log=log,
                       best_epoch=best_epoch, best_f1=best_f1, epochs_run=epochs_run)


def write_metrics_csv(path, rows):
    with open(path, "w") as f:
        f.write("epoch,split,loss,precision,recall,f1,miou\n")
        for r in rows:
            f.write(f"{r.epoch},{r.split},{r.loss:.17g},{r.precision:.17g},"
                    f"{r.recall:.17g},{r.f1:.17g},{r.miou:.17g}\n")


def read_metrics_csv(path):
    rows = []
    with open(path) as f:
        header = f.readline()
        if header.strip() != "epoch,split,loss,precision,recall,f1,miou":
            raise DataError(f"{path}: unexpected metrics header")
        for line in f:
            e, s, *vals = line.strip().split(",")
            rows.append(LogRow(int(e), s, *(float(v) for v in vals)))
    return rows
