"""Report figures written next to the CSV outputs.

matplotlib is imported lazily so the library and the CSV paths of the CLI
work without it.
"""

from __future__ import annotations

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({"font.size": 9, "axes.spines.top": False, "axes.spines.right": False})
    return plt


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    import matplotlib.pyplot as plt

    plt.close(fig)
    return str(path)


def plot_training_log(rows, path, columns=("total", "rep_dec", "w_recon", "route", "k_recon")):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.arange(len(rows))
    for c in columns:
        y = np.array([r.get(c, np.nan) for r in rows], dtype=float)
        if np.all(np.isnan(y)):
            continue
        ax.plot(x, y, lw=0.8, label=c)
    ax.set_yscale("log")
    ax.set_xlabel("step (phase 1 then phase 2)")
    ax.set_ylabel("loss")
    ax.legend(frameon=False, ncol=3)
    return _save(fig, path)


def plot_routing_weights(names, weights, path, tiers=None):
    """Stacked bars of (w_0..w_K) per image."""
    plt = _plt()
    w = np.asarray(weights)
    fig, ax = plt.subplots(figsize=(max(4, 0.35 * len(names) + 1), 3.2))
    bottom = np.zeros(len(names))
    for k in range(w.shape[1]):
        ax.bar(np.arange(len(names)), w[:, k], bottom=bottom, label=f"w_{k}")
        bottom += w[:, k]
    labels = names if tiers is None else [f"{n}\n{t}" for n, t in zip(names, tiers)]
    ax.set_xticks(np.arange(len(names)), labels, rotation=90, fontsize=6)
    ax.set_ylim(0, 1)
    ax.set_ylabel("routing weight")
    ax.legend(frameon=False, ncol=w.shape[1], loc="upper center", bbox_to_anchor=(0.5, 1.15))
    return _save(fig, path)


def plot_route_trajectories(coords, names, path, max_images=12):
    """Per-image 2-D paths v_0 -> ... -> v_K with the gt point marked."""
    plt = _plt()
    coords = np.asarray(coords)[:max_images]
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for pts, name in zip(coords, names):
        line, = ax.plot(pts[:-1, 0], pts[:-1, 1], "-o", ms=3, lw=1, label=name)
        ax.plot(pts[-1, 0], pts[-1, 1], "*", ms=9, color=line.get_color())
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.legend(frameon=False, fontsize=6)
    return _save(fig, path)


def plot_table(rows, label_key, path, metric="psnr"):
    plt = _plt()
    labels = [str(r[label_key]) for r in rows]
    vals = [float(r[metric]) for r in rows]
    fig, ax = plt.subplots(figsize=(max(3.5, 0.7 * len(rows) + 1), 3))
    ax.bar(np.arange(len(rows)), vals, color="tab:blue")
    ax.set_xticks(np.arange(len(rows)), labels, rotation=30, ha="right")
    ax.set_ylabel(metric.upper())
    lo = min(vals) if vals else 0
    ax.set_ylim(max(0.0, lo - 2.0), None)
    return _save(fig, path)
