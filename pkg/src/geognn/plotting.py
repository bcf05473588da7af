"""Figures for grid and report outputs.

Uses the Agg backend and fixed SVG metadata/hash salt so that re-rendering
the same data yields byte-identical files.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .container import atomic_write_bytes  # noqa: E402

RC = {
    "svg.hashsalt": "geognn",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (5.0, 3.4),
}


def save(fig, path) -> None:
    fmt = str(path).rsplit(".", 1)[-1].lower()
    buf = io.BytesIO()
    meta = {"Date": None} if fmt == "svg" else {}
    if fmt == "png":
        meta = {"Software": None}
    fig.savefig(buf, format=fmt, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def _curvature_colors(n):
    # low curvature red/orange, high curvature green
    return plt.get_cmap("RdYlGn")(np.linspace(0.05, 0.95, max(n, 2)))[:n]


def plot_grid(result, path, key: str = "val_macro_f1", title: str | None = None) -> None:
    """One line per curvature: macro-F1 against learning rate (log x axis)."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        lrs = result.lrs()
        curvs = result.curvatures()
        for color, c in zip(_curvature_colors(len(curvs)), curvs):
            label = "euclidean" if c is None else f"c = {c:g}"
            ax.plot(lrs, result.curve(c, key), marker="o", ms=3, lw=1.2, color=color, label=label)
        ax.set_xscale("log")
        ax.set_xlabel("learning rate")
        ax.set_ylabel("macro-F1")
        ax.set_ylim(0.0, 1.0)
        if title:
            ax.set_title(title)
        ax.legend(title="curvature", frameon=False, loc="lower right")
        save(fig, path)


def plot_per_class(table, path, metric: str = "f1") -> None:
    """Grouped bars of a per-class metric, one group per class, one bar per model.

    ``table`` maps model label -> {class name -> {"precision", "recall", "f1"}}.
    """
    models = list(table)
    classes = sorted({k for m in models for k in table[m] if k != "ALL"})
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(5.0, 0.9 * len(classes) + 2), 3.4))
        width = 0.8 / max(len(models), 1)
        x = np.arange(len(classes))
        for i, m in enumerate(models):
            ys = [table[m].get(k, {}).get(metric, np.nan) for k in classes]
            ax.bar(x + (i - (len(models) - 1) / 2) * width, ys, width, label=m)
        ax.set_xticks(x)
        ax.set_xticklabels(classes, rotation=30, ha="right")
        ax.set_ylabel(metric)
        ax.set_ylim(0.0, 1.0)
        ax.legend(frameon=False, ncol=min(len(models), 3), loc="upper center", bbox_to_anchor=(0.5, 1.18))
        save(fig, path)
