"""Figures written next to the delimited reports (histories, metric tables)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import METRIC_NAMES, REGIONS  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 120,
}
# fixed metadata keeps reruns byte-identical
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def plot_search_history(history: Sequence[dict], path) -> Path:
    """Hybrid and kernel loss per epoch; the final epoch is marked with a red dashed line."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        done = [h for h in history if h.get("hybrid_loss") is not None]
        epochs = [h["epoch"] for h in done]
        ax.plot(epochs, [h["hybrid_loss"] for h in done], marker=".", label="hybrid loss")
        ax.plot(epochs, [h["kernel_loss"] for h in done], marker=".", label="kernel loss")
        if history:
            ax.axvline(history[-1]["epoch"], color="red", linestyle="--", linewidth=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("Dice loss")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_train_history(history: Sequence[dict], path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot([h["epoch"] for h in history], [h["loss"] for h in history])
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("Dice loss")
        fig.tight_layout()
        return _save(fig, path)


def plot_metrics(rows: Sequence[dict], path) -> Path:
    """One box plot panel per metric, one box per subregion, means as black stars.

    ``rows`` are per-case CSV records (summary rows are ignored).
    """
    rows = [r for r in rows if r["case_id"] != "mean"]
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(METRIC_NAMES), figsize=(10, 2.8))
        for ax, metric in zip(axes, METRIC_NAMES):
            data = []
            for region in REGIONS:
                vals = [float(r[metric]) for r in rows if r["region"] == region]
                data.append([v for v in vals if not math.isnan(v)])
            ax.boxplot(data, showfliers=True, medianprops={"color": "red"})
            ax.set_xticks(range(1, len(REGIONS) + 1), REGIONS)
            means = [sum(d) / len(d) if d else math.nan for d in data]
            ax.plot(range(1, len(REGIONS) + 1), means, "k*", linestyle="none")
            ax.set_title(metric)
        fig.tight_layout()
        return _save(fig, path)
