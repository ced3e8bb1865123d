"""Figures written next to the delimited outputs of the command-line tools.

matplotlib is imported lazily with the non-interactive Agg backend, so the
library itself does not need it.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

__all__ = ["plot_curves", "plot_tuning", "plot_k_hat"]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_curves(t: np.ndarray, curves: np.ndarray, path, truth: Optional[Sequence] = None) -> Path:
    """Estimated group coefficient functions, one column of ``curves`` per group."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k in range(curves.shape[1]):
        ax.plot(t, curves[:, k], "--", color="k", lw=1.2, label="estimate" if k == 0 else None)
    for k, f in enumerate(truth or []):
        ax.plot(t, f(t) * np.ones_like(t), "-", color="tab:red", lw=1, label="truth" if k == 0 else None)
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\hat\beta(t)$")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_tuning(lambda2_grid, bic_values, lambda1_grid, gcv_values, chosen, path) -> Path:
    """BIC over ``lambda2`` and GCV over ``lambda1`` with the chosen values marked."""
    plt = _pyplot()
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    a1.semilogx(lambda2_grid, bic_values, "o-", ms=3)
    a1.axvline(chosen[1], color="tab:red", lw=0.8)
    a1.set_xlabel(r"$\lambda_2$")
    a1.set_ylabel("BIC")
    a2.semilogx(lambda1_grid, gcv_values, "o-", ms=3)
    a2.axvline(chosen[0], color="tab:red", lw=0.8)
    a2.set_xlabel(r"$\lambda_1$")
    a2.set_ylabel("GCV")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_k_hat(counts: Dict[int, int], path) -> Path:
    """Bar chart of how often each number of groups was estimated."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4, 3))
    ks = sorted(counts)
    ax.bar(ks, [counts[k] for k in ks], color="0.5")
    ax.set_xticks(ks)
    ax.set_xlabel(r"$\hat K$")
    ax.set_ylabel("replicates")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
