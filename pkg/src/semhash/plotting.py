"""Figure rendering for the report paths. Everything goes to files through
the non-interactive Agg backend."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "savefig.dpi": 150,
}
# fixed metadata keeps PNG output byte-identical across runs
_PNG_META = {"Software": None}


def figsize(width=4.5, ratio=None):
    ratio = ratio or (math.sqrt(5) - 1) / 2
    return width, width * ratio


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META if str(path).endswith(".png") else None)
    plt.close(fig)


def plot_hp_curves(curves: dict, path, title="Hierarchical precision @k"):
    """One HP@k line per entry of ``curves`` (label -> values at k=1..K)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        for name, ys in curves.items():
            ys = np.asarray(ys)
            ax.plot(np.arange(1, len(ys) + 1), ys, label=name)
        ax.set_xlabel("k")
        ax.set_ylabel("HP@k")
        ax.set_title(title)
        ax.set_ylim(min(0.0, ax.get_ylim()[0]), 1.02)
        if len(curves) > 1:
            ax.legend(frameon=False)
        _save(fig, path)


def plot_loss_trace(trace: list[dict], path):
    keys = [k for k in ("total", "sim", "kl", "aux") if any(r.get(k) for r in trace)]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(keys), 1, sharex=True, squeeze=False,
                                 figsize=figsize(4.5, 0.35 * max(len(keys), 2)))
        epochs = [r["epoch"] for r in trace]
        for ax, key in zip(axes[:, 0], keys):
            ax.plot(epochs, [r[key] for r in trace], color="k" if key == "total" else None)
            ax.set_ylabel(key)
        axes[-1, 0].set_xlabel("epoch")
        _save(fig, path)


def plot_report_comparison(table: dict, path):
    """Grouped bars: ``table[run][metric] = value``; only precision-type
    metrics in [0, 1] are drawn."""
    runs = list(table)
    metrics = sorted({m for r in runs for m, v in table[r].items() if 0.0 <= v <= 1.0})
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(max(4.5, 1.1 * len(metrics) + 2)))
        width = 0.8 / max(len(runs), 1)
        xs = np.arange(len(metrics))
        for i, r in enumerate(runs):
            vals = [table[r].get(m, np.nan) for m in metrics]
            ax.bar(xs + (i - (len(runs) - 1) / 2) * width, vals, width, label=r)
        ax.set_xticks(xs)
        ax.set_xticklabels(metrics, rotation=20, ha="right")
        ax.set_ylim(0, 1.05)
        ax.legend(frameon=False)
        _save(fig, path)
