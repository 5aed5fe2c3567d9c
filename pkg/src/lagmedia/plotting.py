"""Static PNG figures for run artifacts (Agg backend, no embedded metadata)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import read_table  # noqa: E402

# empty metadata keeps the PNG bytes identical across runs and library versions
_PNG_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_diagnostics(csv_path, out_path, time_column="time"):
    """One panel per diagnostics column, drawn as deviation from its initial value."""
    data, units, _ = read_table(csv_path)
    names = [n for n in data if n != time_column]
    t = data[time_column]
    n = max(len(names), 1)
    fig, axes = plt.subplots(n, 1, figsize=(6, 1.8 * n + 0.6), sharex=True, squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        y = data[name]
        ax.plot(t, y - y[0], lw=1.0)
        ax.set_ylabel(f"Δ{name}", fontsize=8)
        ax.ticklabel_format(axis="y", style="sci", scilimits=(-2, 3))
    axes[-1, 0].set_xlabel(f"{time_column} [{units.get(time_column, '')}]")
    fig.tight_layout()
    return _save(fig, out_path)


def plot_profile(r, curves, out_path, ylabel="value"):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for (label, y), style in zip(curves.items(), ("-", "--", ":")):
        ax.plot(r, y, style, label=label)
    ax.set_xlabel("r")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    return _save(fig, out_path)


def plot_ratios(ratios, saturation, out_path):
    """Trial-function ratios against the unit line and the saturating trial."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(np.arange(len(ratios)), ratios, "o", ms=3, label="random trials")
    ax.axhline(1.0, color="k", lw=0.8)
    ax.axhline(saturation, color="C1", ls="--", label="f = U")
    ax.set_xlabel("trial")
    ax.set_ylabel("ratio")
    ax.legend()
    fig.tight_layout()
    return _save(fig, out_path)
