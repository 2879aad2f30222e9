"""Training/evaluation orchestration, metrics, mask reports, and checkpoints.

The training loop is the standard minibatch recipe: forward with binarized
masks, backward accumulating real-valued mask gradients alongside the weight
gradients, momentum-SGD update on the weights, then the clip-and-symmetrize
update on each mask. Every random choice (init, shuffling, augmentation,
dropout, mask drop, corruption) is derived from the run seed, so a (seed,
config) pair fully determines the metrics and the checkpoint bytes.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    CORRUPTION_KINDS,
    CorruptionSpec,
    augment,
    corrupt,
    load_cifar10,
    normalize_images,
    synthetic_dataset,
)
from .network import (
    ArchSpec,
    BatchNorm,
    OptimizerState,
    TrainConfig,
    apply_gradients,
    build_network,
    softmax_cross_entropy,
)
from .spectral_conv import SpectralConv, mask_percentage

CHECKPOINT_MAGIC = b"SPECREG1"


class CheckpointError(ValueError):
    """Raised for bad magic, truncated files, or tensor shape mismatches."""


class TrainingDivergedError(RuntimeError):
    """Raised when the loss goes non-finite; names the first offending layer."""


@dataclass
class MetricsRow:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float
    mask_pcts: dict
    seconds: float


@dataclass
class MetricsLog:
    mask_names: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def append(self, row: MetricsRow):
        if self.rows and row.epoch <= self.rows[-1].epoch:
            raise ValueError("metrics epochs must increase monotonically")
        self.rows.append(row)

    def csv_text(self) -> str:
        header = ["epoch", "loss", "train_acc", "test_acc"]
        header += [f"{name}_mask_pct" for name in self.mask_names]
        lines = [",".join(header)]
        for r in self.rows:
            cells = [str(r.epoch), repr(float(r.loss)), repr(float(r.train_acc)), repr(float(r.test_acc))]
            cells += [repr(float(r.mask_pcts[name])) for name in self.mask_names]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def summary_text(self) -> str:
        lines = []
        for r in self.rows:
            lines.append(
                f"epoch {r.epoch}: loss {r.loss:.4f}, train acc {r.train_acc:.4f}, "
                f"test acc {r.test_acc:.4f}, {r.seconds:.1f}s"
            )
        if self.rows:
            total = sum(r.seconds for r in self.rows)
            lines.append(f"total wall clock: {total:.1f}s over {len(self.rows)} epochs")
        return "\n".join(lines) + "\n"


def resolve_data(data, limit=None, seed=0):
    """Accept a directory of CIFAR-10 batches, 'synthetic[:N]', or a Dataset pair."""
    if isinstance(data, tuple):
        train_ds, test_ds = data
    elif isinstance(data, (str, Path)) and str(data).startswith("synthetic"):
        text = str(data)
        n = int(text.split(":", 1)[1]) if ":" in text else 2000
        ss = np.random.SeedSequence([seed, 7770])
        train_seed, test_seed = ss.spawn(2)
        train_ds = synthetic_dataset(n, seed=train_seed)
        test_ds = synthetic_dataset(max(n // 4, 100), seed=test_seed)
    else:
        train_ds, test_ds = load_cifar10(data)
    if limit is not None:
        train_ds = train_ds.subset(limit)
    return train_ds, test_ds


def _accuracy(net, images, labels, norm_mean, norm_std, batch_size=256):
    correct = 0
    for start in range(0, len(labels), batch_size):
        batch = images[start : start + batch_size]
        if norm_mean is not None:
            batch = normalize_images(batch, norm_mean, norm_std)
        logits = net.forward(batch, train=False)
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[start : start + batch_size]))
    return correct / max(len(labels), 1)


def _find_nonfinite_layer(net, x) -> str:
    for layer in net.layers:
        x = layer.forward(x, train=False)
        if not np.all(np.isfinite(x)):
            return layer.name
    return "loss"


def mask_pct_by_layer(net) -> dict:
    return {conv.name: mask_percentage(conv.mask) for conv in net.conv_layers()}


def train(
    config: TrainConfig,
    arch: ArchSpec,
    data,
    out_dir=None,
    init_from=None,
    limit=None,
    plots=False,
):
    """Run the full training loop; returns (network, metrics log).

    When out_dir is given, writes checkpoint.bin, metrics.csv and summary.txt
    there (plus plots with plots=True).
    """
    config.validate()
    arch.validate()
    train_ds, test_ds = resolve_data(data, limit=limit, seed=config.seed)

    net = build_network(
        arch,
        classes=10,
        mask_enabled=config.mask_enabled,
        mask_init_mean=config.mask_init_mean,
        mask_init_variance=config.mask_init_variance,
        random_drop_p=config.random_drop_p,
        dropout_keep=config.dropout_keep,
        seed=config.seed,
    )
    if init_from is not None:
        _load_weights_into(net, init_from)

    norm_mean = norm_std = None
    if config.normalize:
        norm_mean = train_ds.images.astype(np.float64).mean(axis=(0, 2, 3))
        norm_std = train_ds.images.astype(np.float64).std(axis=(0, 2, 3))

    opt = OptimizerState()
    data_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 4242]))
    metrics = MetricsLog(mask_names=[c.name for c in net.conv_layers()])
    n = len(train_ds)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        perm = data_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            images = train_ds.images[idx]
            labels = train_ds.labels[idx]
            if config.augment_crop or config.augment_flip:
                images = np.stack([
                    augment(
                        images[j],
                        np.random.SeedSequence([config.seed, epoch, int(idx[j])]),
                        crop=config.augment_crop,
                        flip=config.augment_flip,
                    )
                    for j in range(len(idx))
                ])
            if norm_mean is not None:
                images = normalize_images(images, norm_mean, norm_std)
            logits = net.forward(images, train=True)
            loss, dlogits = softmax_cross_entropy(logits, labels)
            if not np.isfinite(loss):
                layer = _find_nonfinite_layer(net, images)
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}; first non-finite output in layer {layer!r}"
                )
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == labels))
            net.backward(dlogits)
            apply_gradients(
                net, opt, config.learning_rate, config.momentum, config.weight_decay,
                mask_lr=config.effective_mask_lr,
            )
        test_acc = _accuracy(net, test_ds.images, test_ds.labels, norm_mean, norm_std)
        metrics.append(MetricsRow(
            epoch=epoch,
            loss=loss_sum / n,
            train_acc=correct / n,
            test_acc=test_acc,
            mask_pcts=mask_pct_by_layer(net),
            seconds=time.perf_counter() - t0,
        ))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(
            net, out_dir / "checkpoint.bin", epoch=config.epochs, train_config=config,
            norm_mean=norm_mean, norm_std=norm_std,
        )
        (out_dir / "metrics.csv").write_text(metrics.csv_text())
        (out_dir / "summary.txt").write_text(metrics.summary_text())
        if plots:
            from . import plots as plots_mod

            plots_mod.save_loss_curve(metrics, out_dir / "loss.png")
            plots_mod.save_mask_heatmaps(net, out_dir)
    return net, metrics


def evaluate(net, test_ds, norm_mean=None, norm_std=None, corruption="all",
             severity="all", seed=0, batch_size=256):
    """Accuracy on clean and/or corrupted images; returns {column: accuracy}.

    Corrupted accuracies average severities 1..5 unless a single severity is
    requested. Corruption randomness is per-image, derived from (seed, kind,
    severity, image index); evaluation itself is eval-mode and mask drops are
    never applied.
    """
    results = {"clear": _accuracy(net, test_ds.images, test_ds.labels, norm_mean, norm_std, batch_size)}
    if corruption is None:
        return results
    kinds = list(CORRUPTION_KINDS) if corruption == "all" else [corruption]
    for kind in kinds:
        kind_idx = CORRUPTION_KINDS.index(kind)
        severities = [1, 2, 3, 4, 5] if severity == "all" else [int(severity)]
        accs = []
        for sev in severities:
            spec = CorruptionSpec(kind, sev)
            corrupted = np.stack([
                corrupt(test_ds.images[i], spec, np.random.SeedSequence([seed, kind_idx, sev, i]))
                for i in range(len(test_ds))
            ])
            accs.append(_accuracy(net, corrupted, test_ds.labels, norm_mean, norm_std, batch_size))
        results[kind] = float(np.mean(accs))
    return results


def evaluation_csv(variant: str, results: dict) -> str:
    header = "variant,clear,impulse_noise,fog,contrast"
    cells = [variant]
    for col in ("clear", "impulse_noise", "fog", "contrast"):
        cells.append(repr(float(results[col])) if col in results else "")
    return header + "\n" + ",".join(cells) + "\n"


def report_masks(net) -> str:
    """One row per conv layer: 'name, fraction-of-masked-bins' to 4 decimals."""
    convs = net.conv_layers()
    if not convs or all(c.mask_frozen for c in convs):
        return "no masks\n"
    lines = [f"{c.name}, {mask_percentage(c.mask):.4f}" for c in convs]
    return "\n".join(lines) + "\n"


def _model_tensors(net):
    out = []
    for unit in net.iter_units():
        for key, value in unit.params.items():
            out.append((f"{unit.name}.{key}", value))
        if isinstance(unit, BatchNorm):
            out.append((f"{unit.name}.running_mean", unit.running_mean))
            out.append((f"{unit.name}.running_var", unit.running_var))
        if isinstance(unit, SpectralConv):
            out.append((f"{unit.name}.mask", unit.mask.real_values))
            out.append((f"{unit.name}.mask_momentum", unit.mask.momentum_buffer))
    return out


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(net, path, epoch=0, train_config=None, norm_mean=None, norm_std=None):
    """Binary snapshot: magic, length-prefixed JSON descriptor, tensor records."""
    if dataclasses.is_dataclass(train_config):
        train_config = dataclasses.asdict(train_config)
    descriptor = {
        "format_version": 1,
        "model": net.meta,
        "epoch": int(epoch),
        "train_config": train_config,
        "norm_mean": None if norm_mean is None else [float(v) for v in norm_mean],
        "norm_std": None if norm_std is None else [float(v) for v in norm_std],
    }
    desc = _canonical_json(descriptor)
    tensors = _model_tensors(net)
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", len(desc))
    blob += desc
    blob += struct.pack("<I", len(tensors))
    for name, value in tensors:
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", value.ndim)
        blob += struct.pack(f"<{value.ndim}I", *value.shape)
        data = np.ascontiguousarray(value, dtype="<f4")
        blob += data.tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path):
    """Rebuild the network a checkpoint describes; returns (network, descriptor)."""
    buf = Path(path).read_bytes()
    reader = _Reader(buf)
    if reader.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    descriptor = json.loads(reader.take(reader.u32()).decode("utf-8"))
    if descriptor.get("format_version") != 1:
        raise CheckpointError(f"unsupported checkpoint version {descriptor.get('format_version')}")
    meta = descriptor["model"]
    net = build_network(
        ArchSpec(meta["arch"], meta["stages"], meta["blocks"], tuple(meta["widths"])),
        classes=meta["classes"],
        input_shape=tuple(meta["input_shape"]),
        mask_enabled=meta["mask_enabled"],
        mask_init_mean=meta["mask_init_mean"],
        mask_init_variance=meta["mask_init_variance"],
        random_drop_p=meta["random_drop_p"],
        dropout_keep=meta["dropout_keep"],
        seed=meta["seed"],
    )
    expected = _model_tensors(net)
    count = reader.u32()
    if count != len(expected):
        raise CheckpointError(f"checkpoint holds {count} tensors, model needs {len(expected)}")
    for name, value in expected:
        stored_name = reader.take(reader.u32()).decode("utf-8")
        if stored_name != name:
            raise CheckpointError(f"tensor order mismatch: expected {name!r}, found {stored_name!r}")
        ndim = reader.u32()
        shape = tuple(reader.u32() for _ in range(ndim))
        if shape != value.shape:
            raise CheckpointError(f"tensor {name!r}: stored shape {shape} vs model {value.shape}")
        raw = reader.take(4 * int(np.prod(shape, dtype=np.int64)))
        value[...] = np.frombuffer(raw, dtype="<f4").reshape(shape)
    if reader.pos != len(buf):
        raise CheckpointError("trailing bytes after final tensor record")
    return net, descriptor


def _load_weights_into(net, checkpoint_path):
    """Copy everything except mask state from a checkpoint (finetune workflow)."""
    src, _ = load_checkpoint(checkpoint_path)
    src_tensors = dict(_model_tensors(src))
    for name, value in _model_tensors(net):
        if name.endswith(".mask") or name.endswith(".mask_momentum"):
            continue
        if name not in src_tensors:
            raise CheckpointError(f"checkpoint lacks tensor {name!r} required by this architecture")
        if src_tensors[name].shape != value.shape:
            raise CheckpointError(
                f"tensor {name!r}: checkpoint shape {src_tensors[name].shape} vs model {value.shape}"
            )
        value[...] = src_tensors[name]
