"""Command line entry point.

Subcommands: train, eval, report-masks, corrupt-preview. A config file in
``key = value`` form can seed any train flag; explicit flags win over the
file, which wins over built-in defaults. Exit codes: 0 success, 1 user error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .data import (
    CORRUPTION_KINDS,
    CorruptionSpec,
    DatasetFormatError,
    corrupt,
    save_cifar10_batch,
)
from .harness import (
    CheckpointError,
    TrainingDivergedError,
    evaluate,
    evaluation_csv,
    load_checkpoint,
    report_masks,
    resolve_data,
    train,
)
from .network import ArchSpec, TrainConfig


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(f"{message}\n{self.format_usage()}")


def _parse_bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise UserError(f"expected a boolean, got {text!r}")


def _parse_widths(text):
    try:
        return tuple(int(v) for v in str(text).split(","))
    except ValueError:
        raise UserError(f"--widths expects comma-separated integers, got {text!r}")


def _parse_severity(text):
    if text == "all":
        return "all"
    try:
        sev = int(text)
    except ValueError:
        raise UserError(f"--severity expects 0..5 or 'all', got {text!r}")
    if not 0 <= sev <= 5:
        raise UserError(f"--severity expects 0..5 or 'all', got {text!r}")
    return sev


# (dest, flag, kwargs, value-parser-for-config-file); parser None marks store_true flags
TRAIN_OPTIONS = [
    ("data", "--data", dict(help="CIFAR-10 batch dir or synthetic[:N]"), str),
    ("out", "--out", dict(help="output directory"), str),
    ("arch", "--arch", dict(choices=["lenet", "resnet"], default="lenet"), str),
    ("stages", "--stages", dict(type=int, default=3), int),
    ("blocks", "--blocks", dict(type=int, default=3), int),
    ("widths", "--widths", dict(type=_parse_widths, default=(16, 32, 64)), _parse_widths),
    ("epochs", "--epochs", dict(type=int, default=10), int),
    ("batch_size", "--batch-size", dict(type=int, default=32), int),
    ("lr", "--lr", dict(type=float, default=0.01), float),
    ("momentum", "--momentum", dict(type=float, default=0.9), float),
    ("weight_decay", "--weight-decay", dict(type=float, default=1e-4), float),
    ("mask", "--mask", dict(choices=["on", "off"], default="on"), str),
    ("mask_init_mean", "--mask-init-mean", dict(type=float, default=0.8), float),
    ("mask_init_variance", "--mask-init-variance", dict(type=float, default=0.2), float),
    ("mask_lr", "--mask-lr", dict(type=float, default=None), float),
    ("random_drop", "--random-drop", dict(type=float, default=0.0, metavar="P"), float),
    ("augment", "--augment", dict(choices=["none", "crop", "flip", "crop+flip"], default="none"), str),
    ("normalize", "--normalize", dict(action="store_true", default=False), None),
    ("dropout_keep", "--dropout-keep", dict(type=float, default=None), float),
    ("seed", "--seed", dict(type=int, default=0), int),
    ("limit", "--limit", dict(type=int, default=None, help="use only the first N training images"), int),
    ("init_from", "--init-from", dict(default=None, help="checkpoint to take weights from"), str),
    ("plots", "--plots", dict(action="store_true", default=False), None),
]


def _read_config_file(path):
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UserError(f"cannot read config file {path}: {exc}")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UserError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _merge_train_options(args):
    """defaults < config file < explicit flags."""
    merged = {dest: kwargs.get("default") for dest, _, kwargs, _ in TRAIN_OPTIONS}
    if args.config is not None:
        file_values = _read_config_file(args.config)
        known = {dest: parser for dest, _, _, parser in TRAIN_OPTIONS}
        for key, raw in file_values.items():
            if key not in known:
                raise UserError(f"config file: unknown key {key!r}")
            parser = known[key]
            merged[key] = _parse_bool(raw) if parser is None else parser(raw)
    for dest, _, _, _ in TRAIN_OPTIONS:
        explicit = getattr(args, dest)
        if explicit is not None:
            merged[dest] = explicit
    return merged


def _build_parser():
    parser = _Parser(prog="specreg", description="Spectral-mask convolution training harness")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--config", default=None, help="key=value file supplying any train flag")
    for dest, flag, kwargs, _ in TRAIN_OPTIONS:
        kwargs = dict(kwargs)
        if kwargs.get("action") == "store_true":
            # tri-state so a config file value is not silently clobbered
            p_train.add_argument(flag, dest=dest, action="store_const", const=True, default=None,
                                 help=kwargs.get("help"))
        else:
            kwargs["default"] = None
            p_train.add_argument(flag, dest=dest, **kwargs)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on clean/corrupted data")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", default=None)
    p_eval.add_argument("--corruption", choices=list(CORRUPTION_KINDS) + ["all", "none"], default="all")
    p_eval.add_argument("--severity", type=_parse_severity, default="all")
    p_eval.add_argument("--variant", default=None, help="row label in the CSV output")
    p_eval.add_argument("--out", default=None, help="write the CSV here instead of stdout")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--batch-size", type=int, default=256)

    p_report = sub.add_parser("report-masks", help="per-layer masked-frequency percentages")
    p_report.add_argument("--checkpoint", required=True)
    p_report.add_argument("--out", default=None)

    p_preview = sub.add_parser("corrupt-preview", help="apply corruptions to sample images")
    p_preview.add_argument("--data", default=None)
    p_preview.add_argument("--kind", choices=list(CORRUPTION_KINDS) + ["all"], default="all")
    p_preview.add_argument("--severity", type=_parse_severity, default="all")
    p_preview.add_argument("--count", type=int, default=4)
    p_preview.add_argument("--seed", type=int, default=0)
    p_preview.add_argument("--out", required=True, help="output directory")
    p_preview.add_argument("--dump", action="store_true",
                           help="also write one CIFAR-format .bin per (kind, severity)")
    return parser


def _cmd_train(args):
    opts = _merge_train_options(args)
    if opts["data"] is None:
        raise UserError("missing --data (directory of CIFAR-10 batches, or synthetic[:N])")
    config = TrainConfig(
        learning_rate=opts["lr"],
        momentum=opts["momentum"],
        weight_decay=opts["weight_decay"],
        epochs=opts["epochs"],
        batch_size=opts["batch_size"],
        seed=opts["seed"],
        mask_enabled=opts["mask"] == "on",
        mask_init_mean=opts["mask_init_mean"],
        mask_init_variance=opts["mask_init_variance"],
        mask_lr=opts["mask_lr"],
        random_drop_p=opts["random_drop"],
        augment_crop="crop" in opts["augment"],
        augment_flip="flip" in opts["augment"],
        normalize=opts["normalize"],
        dropout_keep=opts["dropout_keep"],
    )
    arch = ArchSpec(opts["arch"], opts["stages"], opts["blocks"], tuple(opts["widths"]))
    out_dir = Path(opts["out"]) if opts["out"] else Path("runs") / "latest"
    _, metrics = train(
        config, arch, opts["data"], out_dir=out_dir,
        init_from=opts["init_from"], limit=opts["limit"], plots=opts["plots"],
    )
    sys.stdout.write(metrics.summary_text())
    sys.stdout.write(f"artifacts written to {out_dir}\n")
    return 0


def _cmd_eval(args):
    net, descriptor = load_checkpoint(args.checkpoint)
    if args.data is None:
        raise UserError("missing --data (directory of CIFAR-10 batches, or synthetic[:N])")
    _, test_ds = resolve_data(args.data, seed=args.seed)
    corruption = None if args.corruption == "none" else args.corruption
    results = evaluate(
        net, test_ds,
        norm_mean=descriptor.get("norm_mean"), norm_std=descriptor.get("norm_std"),
        corruption=corruption, severity=args.severity, seed=args.seed,
        batch_size=args.batch_size,
    )
    variant = args.variant or Path(args.checkpoint).stem
    text = evaluation_csv(variant, results)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_report_masks(args):
    net, _ = load_checkpoint(args.checkpoint)
    text = report_masks(net)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_corrupt_preview(args):
    if args.data is None:
        raise UserError("missing --data (directory of CIFAR-10 batches, or synthetic[:N])")
    _, test_ds = resolve_data(args.data, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    kinds = list(CORRUPTION_KINDS) if args.kind == "all" else [args.kind]
    severities = [0, 1, 2, 3, 4, 5] if args.severity == "all" else [0, args.severity]
    count = min(args.count, len(test_ds))
    from . import plots

    for kind in kinds:
        kind_idx = CORRUPTION_KINDS.index(kind)
        by_severity = {}
        for sev in severities:
            spec = CorruptionSpec(kind, sev)
            by_severity[sev] = [
                corrupt(test_ds.images[i], spec, np.random.SeedSequence([args.seed, kind_idx, sev, i]))
                for i in range(count)
            ]
            if args.dump and sev > 0:
                full = np.stack([
                    corrupt(test_ds.images[i], spec, np.random.SeedSequence([args.seed, kind_idx, sev, i]))
                    for i in range(len(test_ds))
                ])
                save_cifar10_batch(full, test_ds.labels, out_dir / f"{kind}_severity{sev}.bin")
        plots.save_corruption_preview(by_severity, kind, out_dir / f"preview_{kind}.png")
        sys.stdout.write(f"wrote {out_dir / f'preview_{kind}.png'}\n")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UserError(parser.format_usage())
        handler = {
            "train": _cmd_train,
            "eval": _cmd_eval,
            "report-masks": _cmd_report_masks,
            "corrupt-preview": _cmd_corrupt_preview,
        }[args.command]
        return handler(args)
    except UserError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (FileNotFoundError, DatasetFormatError, CheckpointError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except TrainingDivergedError as exc:
        sys.stderr.write(f"runtime error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
