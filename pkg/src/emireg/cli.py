"""Command-line entry point: gen-synth, train, evaluate, predict, ablate, inspect.

Exit codes: 0 success, 1 usage/config error, 2 data or file-format error,
3 numeric failure. Diagnostics go to stderr; machine-readable results
(resolved config, eval reports) go to stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import data
from .errors import ConfigError, DataError, EmiregError, NumericError
from .model import MODALITIES
from .train import (
    EMA_PREFIX,
    TrainConfig,
    ablate,
    evaluate_checkpoint,
    predict_checkpoint,
    train,
)

RUN_ROOT_ENV = "EMIREG_RUN_ROOT"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_dims(spec: str) -> dict[str, int]:
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"dims must be visual:audio:text, got {spec!r}")
    try:
        values = [int(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"dims must be integers, got {spec!r}") from exc
    if any(v < 1 for v in values):
        raise ConfigError(f"dims must be positive, got {spec!r}")
    return dict(zip(MODALITIES, values))


def _run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def _fresh_run_dir(root: Path, name: str) -> Path:
    candidate = root / name
    suffix = 2
    while candidate.exists():
        candidate = root / f"{name}-{suffix}"
        suffix += 1
    return candidate


_TRAIN_FLAGS = [
    # (flag, config field, type, help)
    ("--hidden-dim", "hidden_dim", int, "hidden/fused dimension (default: 256)"),
    ("--dropout", "dropout", float, "dropout ratio (default: 0.2)"),
    ("--batch-size", "batch_size", int, "batch size (default: 32)"),
    ("--lr", "lr", float, "initial learning rate (default: 1e-4)"),
    ("--weight-decay", "weight_decay", float, "decoupled weight decay (default: 1e-4)"),
    ("--epochs", "epochs", int, "training epochs (default: 30)"),
    ("--patience", "patience", int, "early-stopping patience (default: 8)"),
    ("--clip-norm", "clip_norm", float, "gradient norm clip (default: 1.0)"),
    ("--ema-decay", "ema_decay", float, "EMA decay (default: 0.999)"),
    ("--align-len", "align_len", int, "temporal alignment length (default: 128)"),
    ("--lambda-corr", "lambda_corr", float, "correlation-loss weight (default: 0.5)"),
    ("--lambda-aux", "lambda_aux", float, "auxiliary-loss weight (default: 0.3)"),
    ("--lambda-vad", "lambda_vad", float, "VAD-regularizer weight (default: 0.1)"),
    ("--lambda-visual", "lambda_visual", float, "visual aux sub-weight (default: 1.0)"),
    ("--lambda-audio", "lambda_audio", float, "audio aux sub-weight (default: 1.0)"),
    ("--lambda-text", "lambda_text", float, "text aux sub-weight (default: 1.0)"),
    ("--eta-min", "eta_min", float, "cosine schedule floor (default: 0.0)"),
    ("--seed", "seed", int, "run seed (default: 0)"),
]

_TRAIN_CHOICES = [
    ("--fusion", "fusion", ("concat", "average"), "fusion mode (default: concat)"),
    ("--vad", "vad_enabled", ("on", "off"), "VAD audio pathway (default: on)"),
    ("--corr-mode", "corr_mode", ("per_dim", "flat"), "correlation loss form (default: per_dim)"),
    (
        "--hidden-activation",
        "hidden_activation",
        ("relu", "sigmoid", "identity"),
        "hidden activation (default: relu)",
    ),
    (
        "--output-activation",
        "output_activation",
        ("sigmoid", "identity"),
        "output activation (default: sigmoid)",
    ),
    ("--lr-cadence", "lr_cadence", ("epoch", "step"), "cosine step cadence (default: epoch)"),
    ("--ema-cadence", "ema_cadence", ("epoch", "step"), "EMA update cadence (default: step)"),
]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--data", help="dataset directory containing manifest.csv")
    parser.add_argument("--run-dir", help=f"run directory (default: ${RUN_ROOT_ENV} or ./runs)")
    parser.add_argument("--dims", help="feature dims as visual:audio:text")
    for flag, fieldname, typ, help_text in _TRAIN_FLAGS:
        parser.add_argument(flag, dest=fieldname, type=typ, default=None, help=help_text)
    for flag, fieldname, choices, help_text in _TRAIN_CHOICES:
        parser.add_argument(
            flag, dest=fieldname, choices=choices, default=None, help=help_text
        )


def _resolve_config(args, need_run_dir: bool, run_name: str) -> TrainConfig:
    """Precedence: defaults < config file < sidecar dims < explicit flags."""
    payload = TrainConfig().to_dict()
    if args.config:
        config_path = Path(args.config)
        if not config_path.exists():
            raise DataError(f"config file not found: {config_path}")
        with open(config_path) as fh:
            payload.update(json.load(fh))
    if args.data:
        payload["data_dir"] = args.data
    if args.dims:
        payload["dims"] = _parse_dims(args.dims)
    if payload.get("dims") is None and payload.get("data_dir"):
        sidecar = Path(payload["data_dir"]) / data.SIDECAR_NAME
        if sidecar.exists():
            with open(sidecar) as fh:
                payload["dims"] = json.load(fh)["dims"]
    for flag, fieldname, _, _ in _TRAIN_FLAGS:
        value = getattr(args, fieldname)
        if value is not None:
            payload[fieldname] = value
    for flag, fieldname, _, _ in _TRAIN_CHOICES:
        value = getattr(args, fieldname)
        if value is not None:
            payload[fieldname] = value == "on" if fieldname == "vad_enabled" else value
    if args.run_dir:
        payload["run_dir"] = args.run_dir
    cfg = TrainConfig.from_dict(payload)
    if need_run_dir and cfg.run_dir is None:
        cfg.run_dir = str(
            _fresh_run_dir(_run_root(), f"{run_name}-{cfg.config_hash()[:12]}")
        )
    cfg.validate()
    if cfg.data_dir is None:
        raise ConfigError("no dataset given: pass --data or set data_dir in --config")
    return cfg


def _load_eval_config(args) -> TrainConfig:
    """Config for evaluate/predict: --config, else config.json beside the checkpoint."""
    if args.config:
        cfg = TrainConfig.from_json(args.config)
    else:
        sidecar = Path(args.ckpt).parent / "config.json"
        if not sidecar.exists():
            raise ConfigError(
                f"no --config given and {sidecar} does not exist"
            )
        cfg = TrainConfig.from_json(sidecar)
    if getattr(args, "data", None):
        cfg.data_dir = args.data
    return cfg


def build_parser() -> _Parser:
    parser = _Parser(prog="emireg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--dims", required=True, help="feature dims as visual:audio:text")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default: 0)")
    p.add_argument("--noise", type=float, default=0.0, help="target noise sigma (default: 0.0)")
    p.add_argument(
        "--mode",
        choices=("overlap", "disjoint"),
        default="overlap",
        help="latent-to-modality assignment (default: overlap)",
    )
    p.add_argument("--out", required=True, help="output dataset directory")

    p = sub.add_parser("train", help="train a model; prints the resolved config")
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint; prints a JSON report")
    p.add_argument("--ckpt", required=True, help="checkpoint file (.emic)")
    p.add_argument("--split", choices=data.SPLITS, default="val", help="split (default: val)")
    p.add_argument("--no-ema", action="store_true", help="use raw instead of EMA weights")
    p.add_argument("--config", help="config JSON (default: config.json beside the checkpoint)")
    p.add_argument("--data", help="override the dataset directory")

    p = sub.add_parser("predict", help="write a prediction CSV for a split")
    p.add_argument("--ckpt", required=True, help="checkpoint file (.emic)")
    p.add_argument("--manifest", help="manifest CSV (default: the configured dataset's)")
    p.add_argument("--split", choices=data.SPLITS, default="test", help="split (default: test)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--no-ema", action="store_true", help="use raw instead of EMA weights")
    p.add_argument("--raw", action="store_true", help="emit pre-sigmoid logits")
    p.add_argument("--config", help="config JSON (default: config.json beside the checkpoint)")
    p.add_argument("--data", help="override the dataset directory")

    p = sub.add_parser("ablate", help="run the 2x2x2 fusion/objective/VAD grid")
    _add_config_flags(p)
    p.add_argument("--grid", choices=("default",), default="default", help="grid to run")
    p.add_argument("--seeds", type=int, default=1, help="seeds per cell (default: 1)")

    p = sub.add_parser("inspect", help="dump a checkpoint or feature-file header")
    p.add_argument("--ckpt", help="checkpoint file (.emic)")
    p.add_argument("--emif", help="feature file (.emif)")

    return parser


def _cmd_gen_synth(args) -> int:
    manifest = data.generate_synthetic(
        out_dir=args.out,
        n=args.n,
        dims=_parse_dims(args.dims),
        seed=args.seed,
        noise=args.noise,
        mode=args.mode,
    )
    print(f"wrote {args.n} samples under {Path(args.out)} (manifest: {manifest})",
          file=sys.stderr)
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _resolve_config(args, need_run_dir=True, run_name="run")
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    record = training.train(cfg)
    print(
        f"run {record.config_hash[:12]}: best epoch {record.best_epoch} "
        f"p_mean {record.best_p_mean:.6f} ({record.stop_reason}) -> {record.run_dir}",
        file=sys.stderr,
    )
    if record.stop_reason == "non_finite_loss":
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = _load_eval_config(args)
    report = training.evaluate_checkpoint(
        cfg, args.ckpt, args.split, use_ema=not args.no_ema
    )
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def _cmd_predict(args) -> int:
    cfg = _load_eval_config(args)
    manifest = (
        Path(args.manifest)
        if args.manifest
        else Path(cfg.data_dir) / data.MANIFEST_NAME
    )
    ids, values = training.predict_checkpoint(
        cfg,
        args.ckpt,
        manifest,
        args.split,
        use_ema=not args.no_ema,
        raw_logits=args.raw,
    )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        fh.write("id," + ",".join(data.TARGET_COLUMNS) + "\n")
        for sample_id, row in zip(ids, values):
            fh.write(sample_id + "," + ",".join(repr(float(v)) for v in row) + "\n")
    print(f"wrote {len(ids)} predictions to {out_path}", file=sys.stderr)
    return EXIT_OK


def _cmd_ablate(args) -> int:
    base = _resolve_config(args, need_run_dir=True, run_name="ablation")
    seeds = [base.seed + i for i in range(args.seeds)]
    rows, csv_path = training.ablate(base, seeds=seeds)
    print(Path(csv_path).read_text(), end="")
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"grid written to {csv_path}", file=sys.stderr)
    return EXIT_OK if not failed else EXIT_NUMERIC


def _cmd_inspect(args) -> int:
    if bool(args.ckpt) == bool(args.emif):
        raise ConfigError("inspect needs exactly one of --ckpt or --emif")
    if args.emif:
        path = Path(args.emif)
        blocks = data.read_feature_file(path)
        print(f"{path}: magic {data.FEATURE_MAGIC.decode()} version {data.FORMAT_VERSION}")
        for m in MODALITIES:
            block = blocks[m]
            if block is None:
                print(f"  {m}: absent")
            else:
                print(f"  {m}: {block.shape[0]} x {block.shape[1]}")
        return EXIT_OK
    path = Path(args.ckpt)
    tensors = data.load_checkpoint(path)
    raw = {k: v for k, v in tensors.items() if not k.startswith(training.EMA_PREFIX)}
    print(f"{path}: magic {data.CHECKPOINT_MAGIC.decode()} version {data.FORMAT_VERSION}")
    for name, value in tensors.items():
        print(f"  {name}: {'x'.join(str(e) for e in value.shape) or 'scalar'}")
    print(f"parameters: {sum(v.size for v in raw.values())}")
    print(f"tensors: {len(tensors)} ({len(raw)} raw, {len(tensors) - len(raw)} ema)")
    return EXIT_OK


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
    "ablate": _cmd_ablate,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"emireg: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"emireg: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"emireg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EmiregError as exc:
        print(f"emireg: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
