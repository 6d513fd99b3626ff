"""Render study results to PNG files next to their CSV counterparts."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import DistanceStudy
from .mixing import MixPolicy


def save_reward_trace_figure(trace: list[dict], path: str | Path):
    """Mean/max reward and the moving-average baseline per iteration."""
    iters = [row["iteration"] for row in trace]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(iters, [row["mean_reward"] for row in trace], label="mean reward")
    ax1.plot(iters, [row["max_reward"] for row in trace], label="max reward", alpha=0.7)
    ax1.plot(iters, [row["baseline"] for row in trace], label="baseline", linestyle="--")
    ax1.set_ylabel("reward")
    ax1.legend(fontsize=8)
    ax2.plot(iters, [row["entropy"] for row in trace], color="tab:green")
    ax2.set_ylabel("policy entropy")
    ax2.set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_band_study_figure(study: DistanceStudy, path: str | Path,
                           ylabel: str = "RMSE", title: str = ""):
    centers = [0.5 * (lo + hi) for lo, hi in study.bands]
    widths = [0.9 * (hi - lo) for lo, hi in study.bands]
    values = np.array(study.values, dtype=float)
    stds = np.array(study.stds, dtype=float)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(centers, np.nan_to_num(values), width=widths,
           yerr=np.nan_to_num(stds), capsize=3, color="tab:blue", alpha=0.8)
    ax.set_xlabel("normalized pair distance band")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_policy_histogram_figure(policy: MixPolicy, counts: np.ndarray,
                                 path: str | Path, title: str = ""):
    labels = [str(k) for k in policy.options.values]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(labels)), counts, color="tab:orange", alpha=0.85)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_xlabel("k (nearest neighbors mixed)")
    ax.set_ylabel("examples")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_method_comparison_figure(rows: list[dict], path: str | Path):
    rows = [r for r in rows if not r.get("error")]
    if not rows:
        return
    names = [r["method"] for r in rows]
    means = [r["rmse_mean"] for r in rows]
    stds = [r["rmse_std"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(names)), means, yerr=stds, capsize=4, color="tab:purple", alpha=0.8)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("test RMSE (mean ± std over seeds)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
