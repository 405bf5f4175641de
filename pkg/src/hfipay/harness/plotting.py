"""Figure style and the two report figures."""

from __future__ import annotations

from math import sqrt
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

fig_width_pt = 510.0
inches_per_pt = 1.0 / 72.27
golden_mean = (sqrt(5.0) - 1.0) / 2.0
fig_width = fig_width_pt * inches_per_pt
fig_size = [fig_width, fig_width * golden_mean]

RC = {
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "font.family": "serif",
    "figure.figsize": fig_size,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "hfipay",
}


def advantage_figure(rows: Sequence[dict], threshold: float, path: Path) -> Path:
    """Point advantage with 95% CI bars per (game, adversary)."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        labels = [f"{r['game']}\n{r['adversary']}" for r in rows]
        xs = range(len(rows))
        colors = ["0.3" if r["advantage"] <= threshold else "C3" for r in rows]
        ax.bar(xs, [r["advantage"] for r in rows], yerr=[r["ci_half_width"] for r in rows], color=colors,
               capsize=2, width=0.6)
        ax.axhline(threshold, color="C0", lw=0.8, ls="--", label=f"threshold {threshold}")
        ax.set_xticks(list(xs))
        ax.set_xticklabels(labels, rotation=60, ha="right")
        ax.set_ylabel("advantage |p - 1/2|")
        ax.set_ylim(0, 0.55)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path


def linkage_figure(scores: dict[str, float], path: Path) -> Path:
    """Adjusted Rand index of each observer clustering against the true recipients."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        names = list(scores)
        ax.bar(range(len(names)), [scores[n] for n in names], color="0.3", width=0.5)
        ax.axhline(0.0, color="0.6", lw=0.6)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names)
        ax.set_ylabel("adjusted Rand index")
        ax.set_ylim(-0.2, 1.05)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path
