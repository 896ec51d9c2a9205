"""Matplotlib figures written next to the CSV reports."""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {
    "figsize": (6.0, 3.8),
    "dpi": 120,
}


def _save(fig, path):
    fig.tight_layout()
    FigureCanvasAgg(fig).print_figure(str(path), dpi=STYLE["dpi"])


def plot_loss_trace(rows: list, path, terms=("total", "L_m", "L_center", "L_p", "L_var", "L_vio")):
    """Loss per descent step on a log axis, one line per term."""
    fig = Figure(figsize=STYLE["figsize"])
    ax = fig.add_subplot(111)
    steps = np.arange(len(rows))
    for t in terms:
        y = np.array([r[t] for r in rows], dtype=float)
        if not np.any(y > 0):
            continue
        ax.plot(steps, np.where(y > 0, y, np.nan), lw=2.0 if t == "total" else 1.0, label=t)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8, frameon=False)
    _save(fig, path)


def plot_scene_metrics(rows: list, path):
    """Per-scene EPE (all / masked) and, when present, F-measure."""
    has_seg = "fmeasure" in rows[0]
    fig = Figure(figsize=(STYLE["figsize"][0], STYLE["figsize"][1] * (1.6 if has_seg else 1.0)))
    idx = np.arange(len(rows))
    ax = fig.add_subplot(211 if has_seg else 111)
    w = 0.4
    ax.bar(idx - w / 2, [r["epe_all"] for r in rows], w, label="all")
    ax.bar(idx + w / 2, [r["epe_masked"] for r in rows], w, label="masked")
    ax.set_ylabel("EPE [cm]")
    ax.legend(fontsize=8, frameon=False)
    if has_seg:
        ax2 = fig.add_subplot(212, sharex=ax)
        ax2.bar(idx, [r["fmeasure"] for r in rows], 0.6, color="tab:green")
        ax2.axhline(0.75, color="k", lw=0.8, ls="--")
        ax2.set_ylim(0, 1.05)
        ax2.set_ylabel("F-measure")
    (ax2 if has_seg else ax).set_xlabel("scene")
    _save(fig, path)
