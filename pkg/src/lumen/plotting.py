"""Report figures written straight to image files (Agg backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .envmap import tonemap_display  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_loss_curve(history, path, title="training loss"):
    """Train (and validation, when logged) loss per epoch on a log axis."""
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, [h["train_loss"] for h in history], label="train")
    val = [h.get("val_loss") for h in history]
    if any(v is not None for v in val):
        ax.plot(epochs, [np.nan if v is None else v for v in val], label="val")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_metric_bars(summary, path, metrics=("si_rmse", "relight_rmse")):
    """Median of each metric per method, one panel per metric."""
    labels = list(summary)
    fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3.5), squeeze=False)
    for ax, m in zip(axes[0], metrics):
        vals = [summary[k][m]["median"] for k in labels]
        ax.bar(range(len(labels)), [np.nan if v is None else v for v in vals])
        ax.set_xticks(range(len(labels)), labels, rotation=30, ha="right")
        ax.set_title(f"median {m}")
    return _save(fig, path)


def _display(e):
    e = np.maximum(np.asarray(e, dtype=np.float64), 0.0)
    peak = np.percentile(e, 99)
    return tonemap_display(e / peak if peak > 0 else e)


def plot_envmap_grid(rows, path, col_titles=None):
    """Grid of tone-mapped envmaps; ``rows`` is a list of lists of HDR maps.

    Each map is normalized by its own 99th percentile for display only.
    """
    n_r = len(rows)
    n_c = max(len(r) for r in rows) if rows else 1
    fig, axes = plt.subplots(n_r, n_c, figsize=(2.4 * n_c, 1.4 * n_r + 0.4), squeeze=False)
    for i, r in enumerate(rows):
        for j in range(n_c):
            ax = axes[i][j]
            ax.axis("off")
            if j < len(r) and r[j] is not None:
                ax.imshow(_display(r[j]))
            if i == 0 and col_titles and j < len(col_titles):
                ax.set_title(col_titles[j], fontsize=9)
    return _save(fig, path)
