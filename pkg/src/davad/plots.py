"""Figure rendering for the report paths.

Every figure is written next to its delimited output with fixed metadata,
so repeated runs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def loss_curves(records, path) -> None:
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=(6.5, 3.5))
    ax.plot(epochs, [r.vad_loss for r in records], label="speech loss")
    if any(r.domain_loss is not None for r in records):
        ax.plot(epochs, [r.domain_loss for r in records], label="domain loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax2 = ax.twinx()
    ax2.plot(epochs, [r.learning_rate for r in records], color="0.6", linestyle=":", label="lr")
    ax2.set_ylabel("learning rate")
    ax.legend(loc="upper right")
    _save(fig, path)


def tune_curves(table, best, path) -> None:
    """Threshold sweep at the winning epoch plus the per-epoch best rate."""
    by_epoch: dict[int, list[tuple[float, float]]] = {}
    for epoch, sigma, rate in table:
        by_epoch.setdefault(epoch, []).append((sigma, rate))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.5, 3.2))
    sigmas, rates = zip(*sorted(by_epoch[best.best_epoch]))
    ax1.plot(sigmas, rates)
    ax1.axvline(best.best_threshold, color="0.6", linestyle=":")
    ax1.set_xlabel("threshold")
    ax1.set_ylabel("detection error rate (%)")
    ax1.set_title(f"epoch {best.best_epoch}")
    epochs = sorted(by_epoch)
    ax2.plot(epochs, [min(r for _, r in by_epoch[e]) for e in epochs], marker="o", markersize=3)
    ax2.axvline(best.best_epoch, color="0.6", linestyle=":")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("best rate (%)")
    _save(fig, path)


def report_bars(domain_rows, path) -> None:
    """Per-domain stacked false alarm / miss bars."""
    names = [name for name, _ in domain_rows]
    fa = np.array([100.0 * c.false_alarm / c.total_speech if c.total_speech else 0.0 for _, c in domain_rows])
    miss = np.array([100.0 * c.missed_detection / c.total_speech if c.total_speech else 0.0 for _, c in domain_rows])
    fig, ax = plt.subplots(figsize=(max(5.0, 0.55 * len(names) + 2), 3.4))
    x = np.arange(len(names))
    ax.bar(x, fa, label="false alarm")
    ax.bar(x, miss, bottom=fa, label="miss")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("detection error rate (%)")
    ax.legend()
    _save(fig, path)


def confusion_heatmap(matrix: np.ndarray, names: list[str], accuracy: float, path) -> None:
    rows = matrix.sum(axis=1, keepdims=True)
    shares = np.where(rows > 0, matrix / np.maximum(rows, 1), 0.0)
    fig, ax = plt.subplots(figsize=(0.5 * len(names) + 2.5, 0.5 * len(names) + 2.2))
    im = ax.imshow(shares, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=90)
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"accuracy {100 * accuracy:.1f}%")
    for i in range(len(names)):
        for j in range(len(names)):
            if matrix[i, j]:
                color = "white" if shares[i, j] > 0.5 else "black"
                ax.text(j, i, str(int(matrix[i, j])), ha="center", va="center",
                        color=color, fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.8)
    _save(fig, path)


def sweep_curve(lambdas, improvements, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    ax.plot(lambdas, improvements, marker="o")
    ax.set_xscale("symlog", linthresh=0.01)
    ax.axhline(0.0, color="0.6", linestyle=":")
    ax.set_xlabel("reversal weight")
    ax.set_ylabel("relative improvement (%)")
    _save(fig, path)


def matrix_bars(rows, path) -> None:
    """rows: list of (row_id, deter, fa, miss)."""
    ids = [r[0] for r in rows]
    fa = np.array([r[2] for r in rows])
    miss = np.array([r[3] for r in rows])
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    x = np.arange(len(ids))
    ax.bar(x, fa, label="false alarm")
    ax.bar(x, miss, bottom=fa, label="miss")
    ax.set_xticks(x)
    ax.set_xticklabels(ids)
    ax.set_ylabel("detection error rate (%)")
    ax.legend()
    _save(fig, path)
