"""Figures written next to the CSV/JSON outputs.  Uses the non-interactive Agg backend."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update(
        {
            "figure.figsize": (5.0, 3.4),
            "figure.dpi": 120,
            "axes.spines.top": False,
            "axes.spines.right": False,
            "axes.grid": True,
            "grid.alpha": 0.3,
            "legend.frameon": False,
            "font.size": 9,
        }
    )
    return plt


def _save(fig, path: Path) -> Path:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.stem}.", suffix=path.suffix)
    os.close(fd)
    try:
        fig.savefig(tmp, bbox_inches="tight")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
        fig.clf()
    return path


def plot_homophily(epochs, latent, input_value: float, path) -> Path:
    """Latent-structure homophily per recorded epoch against the input graph's."""
    plt = _pyplot()
    fig, ax = plt.subplots()
    ax.plot(epochs, latent, marker="o", ms=3, label="latent structure")
    ax.axhline(input_value, color="0.4", ls="--", label="input graph")
    ax.set_xlabel("epoch")
    ax.set_ylabel("homophily")
    ax.legend()
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_variance(variance_input: float, variance_learned: float, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(3.2, 3.0))
    ax.bar(["input", "learned"], [variance_input, variance_learned], color=["0.6", "C0"])
    ax.set_ylabel("neighbourhood variance")
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_attack(rows: list[dict], path) -> Path:
    """Accuracy against edge-deletion fraction, one line per model, std as a band."""
    plt = _pyplot()
    fig, ax = plt.subplots()
    for model in sorted({r["model"] for r in rows}):
        sel = sorted((r for r in rows if r["model"] == model), key=lambda r: r["fraction"])
        x = np.array([r["fraction"] for r in sel])
        m = np.array([r["mean_acc"] for r in sel])
        s = np.nan_to_num(np.array([r["std"] for r in sel]))
        ax.plot(x, m, marker="o", ms=3, label=model)
        ax.fill_between(x, m - s, m + s, alpha=0.2)
    ax.set_xlabel("fraction of edges removed")
    ax.set_ylabel("test accuracy")
    ax.legend()
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_sweep(points: list[dict], key: str, path) -> Path:
    """Mean test accuracy (with std bars) over a swept hyperparameter."""
    plt = _pyplot()
    fig, ax = plt.subplots()
    pts = sorted(points, key=lambda p: p["overrides"][key])
    x = [p["overrides"][key] for p in pts]
    ax.errorbar(
        x,
        [p["summary"]["mean"] for p in pts],
        yerr=[np.nan_to_num(p["summary"]["std"]) for p in pts],
        marker="o",
        ms=3,
        capsize=3,
    )
    ax.set_xlabel(key)
    ax.set_ylabel("test accuracy")
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_trace(trace, path) -> Path:
    """Per-epoch loss terms (last refinement iteration) and validation accuracy."""
    plt = _pyplot()
    last = {}
    for r in trace.records:
        last[r.epoch] = r
    epochs = sorted(last)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.0))
    ax1.plot(epochs, [last[e].L_s for e in epochs], label="supervised")
    ax1.plot(epochs, [last[e].L_e for e in epochs], label="neg. entropy")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, [last[e].val_acc for e in epochs], color="C2")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation accuracy")
    out = _save(fig, path)
    plt.close(fig)
    return out
