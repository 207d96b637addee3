"""Command-line entry point: dataset synthesis, training, scenario
evaluation, and gradient checking.

Exit codes: 0 success, 2 I/O problem, 3 data problem, 4 configuration
problem, 5 numeric-check failure. Every command is deterministic for fixed
flags and seed.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields

from .errors import ConfigError, DataError, NumericError, SensorflexError

EXIT_IO = 2
EXIT_DATA = 3
EXIT_CONFIG = 4
EXIT_NUMERIC = 5


@dataclass
class RunConfig:
    """Merged model + training + run configuration.

    Round-trips losslessly through its key = value file form; command-line
    flags override file values.
    """

    # model
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 8
    mlp_ratio: int = 4
    block_variant: str = "pre_norm"
    # training
    lr: float = 1e-4
    batch_size: int = 4096
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    max_epochs: int = 100
    early_stop_patience: int = 10
    gamma: float = 2.0
    alpha: float | None = None
    threshold: float = 0.5
    seed: int = 0
    threads: int = 1
    # paths and run selection
    manifest: str = ""
    chips_dir: str = ""
    checkpoint: str = ""
    out_dir: str = ""
    scenario: str = "all"

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                v = "none"
            elif isinstance(v, float):
                v = f"{v:.17g}"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key = value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            kwargs[key] = _coerce(key, value)
        return cls(**kwargs)

    def model_config(self):
        from .model import ModelConfig
        return ModelConfig(d_model=self.d_model, n_layers=self.n_layers,
                           n_heads=self.n_heads, mlp_ratio=self.mlp_ratio,
                           block_variant=self.block_variant, seed=self.seed)

    def train_config(self):
        from .head import FocalLossConfig
        from .train import TrainConfig
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, beta1=self.beta1,
                           beta2=self.beta2, eps=self.eps, weight_decay=self.weight_decay,
                           max_epochs=self.max_epochs,
                           early_stop_patience=self.early_stop_patience, seed=self.seed,
                           loss=FocalLossConfig(gamma=self.gamma, alpha=self.alpha),
                           threads=self.threads)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    t = _FIELD_TYPES[key]
    if t == "float | None":
        return None if value.lower() == "none" else float(value)
    if t == "int":
        return int(value)
    if t == "float":
        return float(value)
    return value


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _default_threads() -> int:
    env = os.environ.get("SENSORFLEX_THREADS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sensorflex",
                                     description="Sensor-flexible pixel-wise flood mapping")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic chip dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--chips", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flood-frac", type=float, default=0.2)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--cloud-frac", type=float, default=0.0)
    p.add_argument("--label-bias", type=_parse_bool, default=False)
    p.add_argument("--train", type=int, default=None, help="train chip count (default 3:1:1 split)")
    p.add_argument("--val", type=int, default=None)
    p.add_argument("--test", type=int, default=None)

    p = sub.add_parser("train", help="fine-tune on the manifest's train/val splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint under masking scenarios")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scenario", choices=("sar", "ms", "fused", "all"), default="all")
    p.add_argument("--out", default=None, help="default: checkpoint directory")
    p.add_argument("--stats", default=None, help="default: stats.json beside the checkpoint")
    p.add_argument("--config", default=None, help="optional config to cross-check")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--dump-maps", action="store_true")
    p.add_argument("--split", default="test")

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=100)

    return parser


# ---------------------------------------------------------------------------
# commands

def _load_split_chips(manifest_path: str, chips_dir: str | None, split: str) -> tuple:
    from .data import read_chip, read_manifest

    records = [r for r in read_manifest(manifest_path) if r.split == split]
    base = chips_dir or os.path.dirname(os.path.abspath(manifest_path))
    chips = [read_chip(p if os.path.isabs(p) else os.path.join(base, p))
             for p in (r.path for r in records)]
    return chips, records


def cmd_synth(args) -> int:
    from .data import split_counts, synth_generate, write_chip, write_manifest

    os.makedirs(args.out, exist_ok=True)
    counts = None
    if args.train is not None or args.val is not None or args.test is not None:
        if None in (args.train, args.val, args.test):
            raise ConfigError("--train/--val/--test must be given together")
        counts = (args.train, args.val, args.test)
        args.chips = sum(counts)
    chips, records = synth_generate(args.seed, args.chips, size=args.size,
                                    flood_frac=args.flood_frac, noise=args.noise,
                                    cloud_frac=args.cloud_frac, label_bias=args.label_bias,
                                    split_counts_=counts)
    for chip, rec in zip(chips, records):
        write_chip(os.path.join(args.out, rec.path), chip)
    write_manifest(os.path.join(args.out, "manifest.csv"), records)
    by_split = split_counts(records)
    mean_ratio = sum(r.flood_ratio for r in records) / len(records)
    print(f"wrote {len(chips)} chips ({args.size}x{args.size}) to {args.out}")
    print(f"splits: train {by_split['train']}, val {by_split['val']}, test {by_split['test']}; "
          f"mean flood ratio {mean_ratio:.3f}")
    return 0


def _resolved_run_config(args, base: "RunConfig | None" = None) -> RunConfig:
    cfg = base or RunConfig()
    if getattr(args, "config", None):
        with open(args.config) as f:
            cfg = RunConfig.from_text(f.read())
    overrides = {"lr": "lr", "batch_size": "batch_size", "max_epochs": "max_epochs",
                 "patience": "early_stop_patience", "seed": "seed", "threads": "threads",
                 "threshold": "threshold"}
    for arg_name, field_name in overrides.items():
        v = getattr(args, arg_name, None)
        if v is not None:
            setattr(cfg, field_name, v)
    if getattr(args, "threads", None) is None and cfg.threads == 1:
        cfg.threads = _default_threads()
    return cfg


def cmd_train(args) -> int:
    from .data import extract_packed
    from .model import save_checkpoint
    from .train import train, write_metrics_csv

    cfg = _resolved_run_config(args)
    cfg.manifest = args.manifest
    cfg.out_dir = args.out

    train_chips, _ = _load_split_chips(args.manifest, cfg.chips_dir or None, "train")
    val_chips, _ = _load_split_chips(args.manifest, cfg.chips_dir or None, "val")
    if not train_chips or not val_chips:
        raise DataError("manifest must provide non-empty train and val splits")

    init_params = None
    start_epoch = 0
    model_cfg = cfg.model_config()
    if args.resume:
        from .model import load_checkpoint
        init_params, model_cfg, start_epoch = load_checkpoint(args.resume)

    os.makedirs(args.out, exist_ok=True)
    result = train(extract_packed(train_chips), extract_packed(val_chips),
                   model_cfg, cfg.train_config(), init_params=init_params,
                   start_epoch=start_epoch, verbose=args.verbose)

    save_checkpoint(os.path.join(args.out, "checkpoint.bin"), result.params,
                    model_cfg, trained_epochs=result.best_epoch)
    result.stats.save(os.path.join(args.out, "stats.json"))
    write_metrics_csv(os.path.join(args.out, "metrics.csv"), result.log)
    with open(os.path.join(args.out, "config.txt"), "w") as f:
        f.write(cfg.to_text())
    print(f"best epoch {result.best_epoch} (val F1 {result.best_f1:.4f}); "
          f"outputs in {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import SCENARIOS, evaluate_scenario, report_to_json
    from .model import ModelBundle, load_checkpoint
    from .tokenizer import NormStats

    params, model_cfg, _ = load_checkpoint(args.checkpoint)
    if args.config:
        with open(args.config) as f:
            file_cfg = RunConfig.from_text(f.read())
        if file_cfg.d_model != model_cfg.d_model:
            raise ConfigError(f"checkpoint d_model {model_cfg.d_model} != "
                              f"config d_model {file_cfg.d_model}")
    stats_path = args.stats or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)),
                                            "stats.json")
    stats = NormStats.load(stats_path)
    bundle = ModelBundle(params, model_cfg, stats)

    chips, records = _load_split_chips(args.manifest, None, args.split)
    if not chips:
        raise DataError(f"manifest has no chips in split {args.split!r}")

    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    dump_dir = None
    if args.dump_maps:
        dump_dir = os.path.join(out_dir, "maps")
        os.makedirs(dump_dir, exist_ok=True)

    names = [os.path.splitext(os.path.basename(r.path))[0] for r in records]
    keys = ("sar", "ms", "fused") if args.scenario == "all" else (args.scenario,)
    for key in keys:
        report = evaluate_scenario(bundle, chips, SCENARIOS[key],
                                   threshold=args.threshold, dump_dir=dump_dir,
                                   chip_names=names)
        path = os.path.join(out_dir, f"report_{key}.json")
        with open(path, "w") as f:
            f.write(report_to_json(report) + "\n")
        print(f"{report['scenario']}: n_bands {report['n_bands']} "
              f"miou {report['miou']:.4f} precision {report['precision']:.4f} "
              f"recall {report['recall']:.4f} f1 {report['f1']:.4f} -> {path}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_table, run_all_checks

    results = run_all_checks(seed=args.seed, n_samples=args.samples)
    print(format_table(results))
    failures = [r for r in results if not r.passed()]
    if failures:
        worst = max(failures, key=lambda r: r.max_rel_err)
        raise NumericError(f"{len(failures)} gradient check(s) failed; "
                           f"worst {worst.name} rel err {worst.max_rel_err:.3e}")
    print(f"all {len(results)} gradient checks passed")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"synth": cmd_synth, "train": cmd_train,
               "eval": cmd_eval, "gradcheck": cmd_gradcheck}[args.command]
    try:
        return handler(args)
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except SensorflexError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
