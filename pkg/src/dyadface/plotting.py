"""Report figures, rendered off-screen to PNG files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_horizon_mse(by_horizon, overlap_mse: float, path) -> Path:
    """NonOverlap error by position inside a block, against the Overlap level."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        steps = np.arange(1, len(by_horizon) + 1)
        ax.plot(steps, by_horizon, marker="o", ms=3, label="NonOverlap")
        ax.axhline(overlap_mse, color="C1", ls="--", label="Overlap")
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_xlabel("frames ahead of the observed window")
        ax.set_ylabel("MSE (standardized)")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_displacements(traces: dict, path) -> Path:
    """Inter-frame displacement over time, one line per labelled sequence."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, trace in traces.items():
            ax.plot(np.arange(1, len(trace) + 1), trace, lw=0.8, label=label)
        ax.set_xlabel("frame")
        ax.set_ylabel("displacement (standardized)")
        if traces:
            ax.legend(frameon=False)
        return _save(fig, path)


def plot_subcluster_histogram(counts, path) -> Path:
    """How many affect classes ended up with each sub-cluster count."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        values = np.bincount(np.asarray(counts, dtype=np.int64), minlength=10)[1:10]
        ax.bar(np.arange(1, 10), values, color="C2")
        ax.axvspan(2.5, 9.5, color="0.9", zorder=0)
        ax.set_xticks(np.arange(1, 10))
        ax.set_xlabel("sub-clusters per affect class")
        ax.set_ylabel("classes")
        return _save(fig, path)
