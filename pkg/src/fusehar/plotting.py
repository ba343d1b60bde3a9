"""Matplotlib figures for reports.

Figures are built with the object API (no pyplot state) and written with a
fixed hash salt and no date stamp, so identical inputs give identical files.
"""

from __future__ import annotations

import matplotlib
from matplotlib.figure import Figure

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "svg.fonttype": "path",
    "svg.hashsalt": "fusehar",
}

# one colour per ablation, in the order they are usually plotted
PALETTE = {"depth": "#4C72B0", "inertial": "#DD8452", "fused": "#55A868"}
FALLBACK = ("#8172B3", "#C44E52", "#937860", "#DA8BC3")


def save_figure(fig: Figure, path, fmt: str | None = None) -> None:
    fmt = fmt or str(path).rsplit(".", 1)[-1]
    metadata = {"Date": None} if fmt == "svg" else None
    with matplotlib.rc_context(STYLE):
        fig.savefig(path, format=fmt, metadata=metadata)


def class_accuracy_figure(groups: dict[str, list[float]], title: str = "",
                          class_names: list[str] | None = None) -> Figure:
    """Grouped bars: one group per class, one bar per entry of ``groups``."""
    with matplotlib.rc_context(STYLE):
        num_classes = max(len(v) for v in groups.values())
        width = max(4.0, 0.35 * num_classes * max(1, len(groups)) + 1.5)
        fig = Figure(figsize=(width, 3.2))
        ax = fig.add_subplot(1, 1, 1)
        bar_w = 0.8 / len(groups)
        for j, (label, acc) in enumerate(groups.items()):
            colour = PALETTE.get(label, FALLBACK[j % len(FALLBACK)])
            xs = [c - 0.4 + bar_w * (j + 0.5) for c in range(len(acc))]
            ax.bar(xs, [100.0 * a for a in acc], bar_w, label=label, color=colour)
        ax.set_xticks(range(num_classes))
        ax.set_xticklabels(class_names or [str(c + 1) for c in range(num_classes)])
        ax.set_xlabel("action class")
        ax.set_ylabel("accuracy (%)")
        ax.set_ylim(0, 105)
        if title:
            ax.set_title(title)
        if len(groups) > 1:
            ax.legend(loc="lower right", ncol=len(groups))
        fig.tight_layout()
    return fig
