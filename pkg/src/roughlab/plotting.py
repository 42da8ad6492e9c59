"""Figures for the report path of the runner (matplotlib, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def lines(path: Path, x, series: dict, title: str, xlabel: str = "t", ylabel: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for name, y in series.items():
        ax.plot(x, y, lw=1, label=name)
    ax.set(title=title, xlabel=xlabel, ylabel=ylabel)
    if len(series) > 1:
        ax.legend(fontsize=8)
    return _save(fig, path)


def loglog(path: Path, x, series: dict, title: str, xlabel: str, ylabel: str) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for name, y in series.items():
        y = np.asarray(y, dtype=float)
        ok = y > 0
        ax.loglog(np.asarray(x)[ok], y[ok], "o-", ms=3, label=name)
    ax.set(title=title, xlabel=xlabel, ylabel=ylabel)
    ax.legend(fontsize=8)
    return _save(fig, path)


def z_scores(path: Path, labels, z, threshold: float, title: str) -> Path:
    """Horizontal bars of |mean| / SE with the rejection threshold marked."""
    z = np.minimum(np.asarray(z, dtype=float), 50.0)
    fig, ax = plt.subplots(figsize=(6, 0.3 * len(labels) + 1.2))
    colors = ["tab:red" if v > threshold else "tab:green" for v in z]
    ax.barh(range(len(labels)), z, color=colors)
    ax.axvline(threshold, color="k", ls="--", lw=1)
    ax.set_yticks(range(len(labels)), labels, fontsize=7)
    ax.invert_yaxis()
    ax.set(title=title, xlabel="|mean| / SE (capped at 50)")
    return _save(fig, path)


def scatter(path: Path, x, y, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    ax.plot(x, y, ",", alpha=0.4)
    ax.set(title=title, xlabel="X", ylabel="Y", aspect="equal")
    return _save(fig, path)
