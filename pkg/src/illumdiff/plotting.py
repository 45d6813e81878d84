"""Report figures written next to the CSV outputs."""

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
    "savefig.dpi": 120,
}

LABEL_COLORS = {"overexposed": "#d95f02", "underexposed": "#1b9e77", "lowlight": "#7570b3"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_trace(trace, path, window: int = 20) -> Path:
    steps = np.array([s for _, s, _ in trace])
    losses = np.array([l for _, _, l in trace])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(steps, losses, color="0.75", lw=0.8, label="step")
        if len(losses) >= window:
            smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
            ax.plot(steps[window - 1 :], smooth, color="C0", lw=1.5, label=f"mean of {window}")
        ax.set_xlabel("optimizer step")
        ax.set_ylabel("L1 loss")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_metric_report(report, path) -> Path:
    psnrs = [r[1] for r in report.rows]
    ssims = [r[2] for r in report.rows]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7, 2.8))
        ax1.hist(psnrs, bins=min(20, max(len(psnrs), 1)), color="C0")
        ax1.axvline(report.mean_psnr, color="k", ls="--", lw=1)
        ax1.set_xlabel("PSNR (dB)")
        ax1.set_ylabel("images")
        ax2.hist(ssims, bins=min(20, max(len(ssims), 1)), color="C1")
        ax2.axvline(report.mean_ssim, color="k", ls="--", lw=1)
        ax2.set_xlabel("SSIM")
        return _save(fig, path)


def _project_2d(feats: np.ndarray) -> np.ndarray:
    centered = feats - feats.mean(axis=0)
    if centered.shape[1] == 1:
        return np.hstack([centered, np.zeros_like(centered)])
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:2].T


def plot_cluster_diagnostic(features_by_block, rows, path) -> Path:
    """One PCA scatter per prompt block, colored by degradation label."""
    blocks = list(features_by_block)
    dbi = {r["block"]: r["dbi"] for r in rows}
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(blocks), figsize=(3 * len(blocks), 3), squeeze=False)
        for ax, block in zip(axes[0], blocks):
            feats, labels = features_by_block[block]
            xy = _project_2d(np.asarray(feats))
            labels = np.asarray(labels)
            for label in dict.fromkeys(labels.tolist()):
                sel = labels == label
                ax.scatter(xy[sel, 0], xy[sel, 1], s=8, color=LABEL_COLORS.get(label), label=label)
            ax.set_title(f"block {block}  DBI {dbi.get(block, float('nan')):.2f}")
            ax.set_xticks([])
            ax.set_yticks([])
        axes[0][0].legend(frameon=False, loc="best")
        return _save(fig, path)
