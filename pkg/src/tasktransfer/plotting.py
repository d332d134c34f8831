"""Static SVG learning-curve figures.

Matplotlib embeds a creation date and random element ids in SVG output by
default; both are pinned here so identical inputs give identical bytes.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .adaptation import MatchCurves  # noqa: E402

STYLE = {
    "overall": dict(color="tab:blue", label="all transfers"),
    "scratch": dict(color="tab:green", label="from scratch"),
    "match": dict(color="tab:orange", label="same {dim}"),
    "differ": dict(color="tab:red", label="different {dim}", linestyle="--"),
}


def plot_match_curves(mc: MatchCurves, path) -> None:
    with plt.rc_context({"svg.hashsalt": "tasktransfer", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for name in ("overall", "scratch", "match", "differ"):
            values = getattr(mc, name)
            if values is None:
                continue
            style = dict(STYLE[name])
            style["label"] = style["label"].format(dim=mc.dimension)
            ax.plot(mc.steps, values, **style)
        empty = mc.empty_partitions
        if empty:
            ax.text(
                0.02, 0.95, "empty partition: " + ", ".join(empty),
                transform=ax.transAxes, va="top", fontsize=8, color="0.3",
            )
        ax.set_xlabel("training steps")
        ax.set_ylabel("success rate (last 100 episodes)")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"Adaptation by {mc.dimension} match (n={mc.n_match} same, {mc.n_differ} different)")
        ax.legend(loc="lower right", fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
