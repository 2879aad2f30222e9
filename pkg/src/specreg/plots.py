"""Optional image outputs: loss curves, mask heatmaps, corruption previews."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .spectral_conv import binarize


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_loss_curve(metrics, path):
    plt = _pyplot()
    epochs = [r.epoch for r in metrics.rows]
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(epochs, [r.loss for r in metrics.rows], "b-", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax2 = ax1.twinx()
    ax2.plot(epochs, [r.train_acc for r in metrics.rows], "g--", label="train acc")
    ax2.plot(epochs, [r.test_acc for r in metrics.rows], "r--", label="test acc")
    ax2.set_ylabel("accuracy")
    fig.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_mask_heatmaps(net, out_dir):
    plt = _pyplot()
    out_dir = Path(out_dir)
    for conv in net.conv_layers():
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 4))
        im = ax1.imshow(np.asarray(conv.mask.real_values, dtype=np.float64), vmin=0, vmax=1)
        ax1.set_title(f"{conv.name} mask")
        fig.colorbar(im, ax=ax1, fraction=0.046)
        ax2.imshow(binarize(conv.mask), vmin=0, vmax=1, cmap="gray")
        ax2.set_title("binarized")
        fig.tight_layout()
        fig.savefig(out_dir / f"mask_{conv.name}.png", dpi=110)
        plt.close(fig)


def save_corruption_preview(images_by_severity, kind, path):
    """Grid: one row per sample image, one column per severity (0 = clean)."""
    plt = _pyplot()
    severities = sorted(images_by_severity)
    n_rows = len(images_by_severity[severities[0]])
    fig, axes = plt.subplots(n_rows, len(severities), figsize=(2 * len(severities), 2 * n_rows))
    axes = np.atleast_2d(axes)
    for col, sev in enumerate(severities):
        for row in range(n_rows):
            ax = axes[row, col]
            ax.imshow(np.transpose(images_by_severity[sev][row], (1, 2, 0)))
            ax.set_axis_off()
            if row == 0:
                ax.set_title(f"sev {sev}")
    fig.suptitle(kind)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
