"""Static figure files for CLI runs (Agg backend, no display)."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    _plt().close(fig)
    return path


def layer_heatmap(result, n_layers: int, path):
    plt = _plt()
    ms = sorted({m for _, m in result.table})
    grid = np.full((len(ms), n_layers), np.nan)
    for (i, m), s in result.table.items():
        grid[ms.index(m), i] = s
    fig, ax = plt.subplots(figsize=(8, 5))
    im = ax.imshow(grid, aspect="auto", origin="lower", cmap="viridis")
    ax.set_xlabel("start layer i")
    ax.set_ylabel("window size m")
    ax.set_yticks(range(len(ms)), [str(m) for m in ms])
    fig.colorbar(im, ax=ax, label="IA score")
    return _save(fig, path)


def line(xs, ys, xlabel, ylabel, path, hline=None, labels=None):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    series = ys if labels else [ys]
    for k, y in enumerate(series):
        ax.plot(xs if not labels else xs[k], y, marker=".", label=None if not labels else labels[k])
    if hline is not None:
        ax.axhline(hline, color="grey", linestyle="--")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if labels:
        ax.legend()
    return _save(fig, path)


def bars(names, before, after, path, ylabel="positive rate"):
    plt = _plt()
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.2, before, 0.4, label="before")
    ax.bar(x + 0.2, after, 0.4, label="after")
    ax.set_xticks(x, [str(n) for n in names])
    ax.set_ylabel(ylabel)
    ax.legend()
    return _save(fig, path)
