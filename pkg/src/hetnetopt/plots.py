"""Matplotlib figure rendering for the experiment reports.

Kept separate from the solvers so the numerical core has no plotting
imports; the CLI writes every figure next to its CSV.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_ALGO_ORDER = ["Greedy", "GLS", "RU", "RRA", "MSA", "DG", "DLS",
               "Joint-GLS-AF", "Joint-RA-AF"]


def save_utility_vs_alpha(series, path):
    """Line plot of utility versus alpha, one series per algorithm.

    `series` maps algorithm label -> list of (alpha, utility).
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label in sorted(series, key=lambda s: (_ALGO_ORDER.index(s)
                                               if s in _ALGO_ORDER else 99)):
        pts = sorted(series[label])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    ax.set_xlabel(r"fairness parameter $\alpha$")
    ax.set_ylabel("system utility")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_history(records, path, title=""):
    """Utility-versus-iteration plot for a joint optimization run.

    `records` is a list of dicts with keys round, stage, score (and
    optionally rounded_score).
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    xs = range(1, len(records) + 1)
    ax.plot(list(xs), [r["score"] for r in records], marker="o", label="score")
    if any(r.get("rounded_score") is not None for r in records):
        ax.plot(list(xs), [r.get("rounded_score") for r in records],
                marker="s", linestyle="--", label="rounded")
    labels = [f"{r['round']}:{r['stage'][:3]}" for r in records]
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=45, fontsize=7)
    ax.set_xlabel("round : stage")
    ax.set_ylabel("system utility")
    if title:
        ax.set_title(title, fontsize=9)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
