"""Figure rendering for the report-producing commands.

Every report writes its figure next to the delimited output it
illustrates. The Agg backend is forced so rendering works headless, and
PNG metadata is pinned so repeated runs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_META = {"metadata": {"Software": "trajsieve"}}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=110, **_META)
    plt.close(fig)


def plot_metrics(rows, path) -> None:
    """Per-scene error distribution plus the kept-fraction/cost picture."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ades = [r.ade for r in rows]
    ax1.hist(ades, bins=20, color="steelblue", edgecolor="black", linewidth=0.4)
    ax1.set_xlabel("ADE (m)")
    ax1.set_ylabel("scenes")
    ax1.set_title("displacement error")
    n_in = np.array([r.n_in for r in rows])
    ratio = np.array([r.flops_ratio for r in rows])
    kept = np.array([r.n_kept for r in rows])
    frac = np.where(n_in > 1, (kept - 1) / np.maximum(n_in - 1, 1), 1.0)
    sc = ax2.scatter(n_in, ratio, c=frac, cmap="viridis", vmin=0.0, vmax=1.0, s=18)
    ax2.axhline(1.0, color="gray", linewidth=0.8, linestyle="--")
    ax2.set_xlabel("people in scene")
    ax2.set_ylabel("cost ratio vs no pruning")
    ax2.set_title("compute per scene")
    fig.colorbar(sc, ax=ax2, label="kept fraction")
    fig.tight_layout()
    _save(fig, path)


def plot_sweep(rows, path) -> None:
    """Cost ratio against crowd size, one curve per kept fraction."""
    fig, ax = plt.subplots(figsize=(6, 4))
    fractions = sorted({r.keep_fraction for r in rows}, reverse=True)
    for frac in fractions:
        pts = [(r.n_in, r.ratio) for r in rows if r.keep_fraction == frac]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                marker="", linewidth=1.6, label=f"keep {frac:g}")
    ax.axhline(1.0, color="gray", linewidth=0.8, linestyle="--")
    ax.set_xlabel("people in scene")
    ax.set_ylabel("cost ratio vs no pruning")
    ax.set_title("pruned pipeline cost")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_scores(rows, path) -> None:
    """Histogram of neighbor relevance scores."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist([r.score for r in rows], bins=30, range=(0.0, 1.0),
            color="darkorange", edgecolor="black", linewidth=0.4)
    ax.set_xlabel("relevance score")
    ax.set_ylabel("neighbors")
    ax.set_title("score distribution")
    fig.tight_layout()
    _save(fig, path)


def plot_ablate(score_sets, path) -> None:
    """Overlaid score histograms for the two variance-loss arms."""
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    colors = {1.0: "steelblue", 0.0: "firebrick"}
    for alpha in sorted(score_sets, reverse=True):
        scores = score_sets[alpha]
        ax.hist(scores, bins=30, range=(0.0, 1.0), alpha=0.55,
                color=colors.get(alpha, "gray"),
                label=f"alpha={alpha:g} (std {np.std(scores):.3f})")
    ax.set_xlabel("relevance score")
    ax.set_ylabel("neighbors")
    ax.set_title("variance loss keeps scores informative")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_oracle(rows, path) -> None:
    """Baseline versus oracle ADE per scene."""
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    base = [r.ade_baseline for r in rows]
    best = [r.ade_oracle for r in rows]
    lim = max(max(base), max(best)) * 1.05
    ax.scatter(base, best, s=16, color="seagreen")
    ax.plot([0, lim], [0, lim], color="gray", linewidth=0.8, linestyle="--")
    ax.set_xlim(0, lim)
    ax.set_ylim(0, lim)
    ax.set_xlabel("ADE keeping everyone (m)")
    ax.set_ylabel("ADE after best removal (m)")
    ax.set_title("leave-one-out oracle")
    fig.tight_layout()
    _save(fig, path)
