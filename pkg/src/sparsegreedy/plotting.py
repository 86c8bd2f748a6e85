"""Figures written next to the CSV/JSON outputs (headless Agg backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_regret(result, path, band: float = 0.5) -> Path:
    """Mean cumulative regret, a ``band``-sigma shaded region and the sqrt(t) fit."""
    T = result.cumulative.shape[1]
    t = np.arange(1, T + 1)
    mean, std = result.mean, result.std
    a, b, r2 = result.fit
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t, mean, color="C0", label="mean cumulative regret")
    ax.fill_between(t, mean - band * std, mean + band * std, color="C0", alpha=0.25,
                    label=f"$\\pm{band:g}$ std")
    lo, hi = result.config.fit_window
    tf = np.arange(lo, hi + 1)
    ax.plot(tf, a + b * np.sqrt(tf), "--", color="C3",
            label=f"${a:.2f} + {b:.3f}\\sqrt{{t}}$ ($r^2$={r2:.3f})")
    ax.set_xlabel("round t")
    ax.set_ylabel("cumulative regret")
    ax.legend(loc="upper left")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_margins(reports, path) -> Path:
    """Sandwich margins (lambda_min of E[XX^T] - Sigma_beta) per direction, with 3-se bars."""
    margins = np.array([r.margin for r in reports])
    ses = np.array([r.margin_stderr for r in reports])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    idx = np.arange(margins.size)
    ax.errorbar(idx, margins, yerr=3 * ses, fmt="o", ms=3, capsize=2)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("direction")
    ax.set_ylabel("margin")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
