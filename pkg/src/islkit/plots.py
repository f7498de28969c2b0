"""Figure rendering for experiment reports.

Every run writes PNG diagnostics next to its CSV/JSON artifacts: the loss
curve with the rank-count schedule, the rank pmf against the uniform line,
and a real-vs-generated sample comparison.  The CSV/JSON files remain the
machine-readable contract; figures are for eyeballing runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_loss_curve",
    "save_rank_pmf",
    "save_sample_comparison_1d",
    "save_sample_scatter_2d",
]

_DPI = 120


def save_loss_curve(losses, k_values, path) -> str:
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    epochs = np.arange(1, len(losses) + 1)
    ax.plot(epochs, losses, lw=1.2, color="tab:blue", label="surrogate loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    if k_values is not None and len(k_values) == len(losses):
        twin = ax.twinx()
        twin.step(epochs, k_values, where="post", color="tab:orange", lw=1.0, label="K")
        twin.set_ylabel("K")
        twin.set_ylim(0, max(k_values) + 1)
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return str(path)


def save_rank_pmf(counts, path, p_value=None) -> str:
    counts = np.asarray(counts, dtype=np.float64)
    k = counts.size - 1
    pmf = counts / max(counts.sum(), 1.0)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.bar(np.arange(k + 1), pmf, color="tab:blue", alpha=0.75)
    ax.axhline(1.0 / (k + 1), color="tab:red", ls="--", lw=1.0, label="uniform")
    title = "rank statistic pmf"
    if p_value is not None:
        title += f"  (chi2 p = {p_value:.3g})"
    ax.set_title(title)
    ax.set_xlabel("rank")
    ax.set_ylabel("relative frequency")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return str(path)


def save_sample_comparison_1d(real, generated, path) -> str:
    real = np.asarray(real, dtype=np.float64).ravel()
    gen = np.asarray(generated, dtype=np.float64).ravel()
    lo, hi = np.quantile(np.concatenate([real, gen]), [0.005, 0.995])
    bins = np.linspace(lo, hi, 80)
    fig, axes = plt.subplots(1, 2, figsize=(8.5, 3.4))
    for ax, log in zip(axes, (False, True)):
        ax.hist(real, bins=bins, density=True, alpha=0.5, label="target", color="tab:red")
        ax.hist(gen, bins=bins, density=True, alpha=0.5, label="model", color="tab:blue")
        if log:
            ax.set_yscale("log")
            ax.set_title("log scale")
        else:
            ax.set_title("linear scale")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return str(path)


def save_sample_scatter_2d(real, generated, path) -> str:
    real = np.asarray(real, dtype=np.float64)
    gen = np.asarray(generated, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(4.6, 4.4))
    ax.scatter(real[:, 0], real[:, 1], s=4, alpha=0.35, label="target", color="tab:red")
    ax.scatter(gen[:, 0], gen[:, 1], s=4, alpha=0.35, label="model", color="tab:blue")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(fontsize=8)
    ax.set_title("first two coordinates")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return str(path)
