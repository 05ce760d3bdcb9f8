"""Figures rendered from exported tables (Bland-Altman, ROC, mode variance)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "svg.hashsalt": "lvatlas",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no Software/date chunks so reruns are byte identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def bland_altman_figure(means, diffs, bias, loa_low, loa_high, title, path, unit=""):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        ax.scatter(means, diffs, s=10, color="0.25", linewidths=0)
        for y, ls in ((bias, "-"), (loa_low, "--"), (loa_high, "--")):
            ax.axhline(y, color="tab:red", ls=ls, lw=1)
        ax.set_xlabel(f"mean of methods {unit}".strip())
        ax.set_ylabel(f"difference {unit}".strip())
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def roc_figure(curves: dict, path, title="ROC"):
    """``curves`` maps label -> (fpr, tpr, auc)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.4, 3.4))
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls=":")
        for label, (fpr, tpr, auc) in sorted(curves.items()):
            ax.step(fpr, tpr, where="post", lw=1.2, label=f"{label} (AUC {auc:.3f})")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def variance_figure(variances, path, max_modes=30):
    v = np.asarray(variances, dtype=float)
    frac = v / v.sum() if v.sum() > 0 else np.zeros_like(v)
    k = min(len(v), max_modes)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        idx = np.arange(1, k + 1)
        ax.bar(idx, 100 * frac[:k], color="0.55")
        ax.plot(idx, 100 * np.cumsum(frac)[:k], color="tab:blue", marker="o", ms=2.5, lw=1)
        ax.set_xlabel("mode")
        ax.set_ylabel("variance explained (%)")
        fig.tight_layout()
        return _save(fig, path)
