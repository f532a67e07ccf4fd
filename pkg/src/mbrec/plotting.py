"""Figures written next to the tab-separated outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluator import AttentionRecord, Bucket  # noqa: E402
from .trainer import EpochLog  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no Software tag: keeps PNG bytes identical across matplotlib builds
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def loss_curve(history: list[EpochLog], path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot([e.epoch for e in history], [e.hinge for e in history], lw=1.2, color="C0")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean hinge loss per pair")
        return _save(fig, path)


def sparsity_chart(buckets: list[Bucket], n: int, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        x = np.arange(len(buckets))
        labels = [f"{b.low}-{b.high}" for b in buckets]
        ax.bar(x - 0.2, [b.hr[n] for b in buckets], 0.4, label=f"HR@{n}", color="C0")
        ax.bar(x + 0.2, [b.ndcg[n] for b in buckets], 0.4, label=f"NDCG@{n}", color="C1")
        ax.set_xticks(x, labels)
        ax.set_xlabel("interactions per user")
        ax.set_ylim(0, 1)
        ax2 = ax.twinx()
        ax2.plot(x, [b.population for b in buckets], "k.--", lw=0.8, label="users")
        ax2.set_ylabel("users")
        ax2.set_ylim(bottom=0)
        ax.legend(loc="upper left", frameon=False)
        return _save(fig, path)


def attention_heatmaps(rec: AttentionRecord, path) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(10, 3.2),
                                 gridspec_kw={"width_ratios": [1, 1, 1]})
        k = rec.behaviors
        layers = [f"E{l}" for l in range(rec.layer_importance.shape[0])]
        panels = [
            (rec.behavior_correlation, k, k, "behavior inter-correlation"),
            (rec.behavior_importance[None, :], ["user"], k, "behavior importance"),
            (rec.layer_importance, ["u." + s for s in layers], ["i." + s for s in layers], "cross-layer importance"),
        ]
        for ax, (mat, rows, cols, title) in zip(axes, panels):
            im = ax.imshow(mat, cmap="viridis", aspect="auto")
            ax.set_xticks(range(len(cols)), cols)
            ax.set_yticks(range(len(rows)), rows)
            ax.set_title(title)
            for (r, c), v in np.ndenumerate(mat):
                ax.text(c, r, f"{v:.2f}", ha="center", va="center", color="w", fontsize=7)
            fig.colorbar(im, ax=ax, fraction=0.046)
        return _save(fig, path)
