"""Image-quality metrics, the clustering index, and report files."""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

PSNR_CAP = 100.0


def _as_array(x) -> np.ndarray:
    if torch.is_tensor(x):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``PSNR_CAP``."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be > 0")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03, peak: float = 1.0) -> float:
    """Mean SSIM over the valid (unpadded) window positions, averaged over channels.

    Inputs are ``(C, H, W)`` or ``(H, W)``.
    """
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < window:
        raise ValueError(f"image {a.shape[-2:]} smaller than the {window}-tap window")
    g = torch.from_numpy(gaussian_window(window, sigma))
    kernel = (g[:, None] * g[None, :])[None, None]

    def blur(x):
        return F.conv2d(x, kernel)

    x = torch.from_numpy(a)[:, None]
    y = torch.from_numpy(b)[:, None]
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x**2
    var_y = blur(y * y) - mu_y**2
    cov = blur(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float((num / den).mean())


def davies_bouldin(features, labels) -> float:
    """Davies-Bouldin index with mean Euclidean distance-to-centroid as scatter."""
    x = _as_array(features)
    if x.ndim != 2:
        raise ValueError(f"features must be (n, D), got {x.shape}")
    labels = np.asarray(labels)
    if len(labels) != len(x):
        raise ValueError("one label per feature vector required")
    groups = list(dict.fromkeys(labels.tolist()))
    if len(groups) < 2:
        raise ValueError("need at least two clusters")
    centroids = np.stack([x[labels == g].mean(axis=0) for g in groups])
    scatter = np.array(
        [np.linalg.norm(x[labels == g] - c, axis=1).mean() for g, c in zip(groups, centroids)]
    )
    dist = np.linalg.norm(centroids[:, None] - centroids[None], axis=-1)
    np.fill_diagonal(dist, np.inf)
    if np.any(dist == 0):
        raise ValueError("two clusters share a centroid; index undefined")
    ratio = (scatter[:, None] + scatter[None]) / dist
    return float(ratio.max(axis=1).mean())


# -- reports ----------------------------------------------------------------


@dataclass
class MetricReport:
    rows: list[tuple[str, float, float]] = field(default_factory=list)

    def add(self, sample_id: str, restored, reference):
        self.rows.append((sample_id, psnr(restored, reference), ssim(restored, reference)))

    def _column(self, i):
        return [r[i] for r in self.rows]

    @property
    def mean_psnr(self) -> float:
        return statistics.fmean(self._column(1))

    @property
    def mean_ssim(self) -> float:
        return statistics.fmean(self._column(2))

    @property
    def std_psnr(self) -> float:
        return statistics.pstdev(self._column(1))

    @property
    def std_ssim(self) -> float:
        return statistics.pstdev(self._column(2))

    def write_csv(self, path) -> Path:
        """Per-image rows, then ``AGGREGATE_MEAN`` and ``AGGREGATE_STD`` lines."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "psnr", "ssim"])
            for sample_id, p, s in self.rows:
                w.writerow([sample_id, f"{p:.6f}", f"{s:.8f}"])
            w.writerow(["AGGREGATE_MEAN", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.8f}"])
            w.writerow(["AGGREGATE_STD", f"{self.std_psnr:.6f}", f"{self.std_ssim:.8f}"])
        return path


def read_report_aggregate(path) -> dict[str, tuple[float, float]]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row and row[0].startswith("AGGREGATE"):
                out[row[0]] = (float(row[1]), float(row[2]))
    return out


def evaluate_directories(restored_dir, reference_dir) -> MetricReport:
    """Pair images by file stem across the two directories."""
    from .data import list_images, read_image

    restored = {p.stem: p for p in list_images(restored_dir)}
    reference = {p.stem: p for p in list_images(reference_dir)}
    common = sorted(restored.keys() & reference.keys())
    if not common:
        raise FileNotFoundError(f"no image names shared by {restored_dir} and {reference_dir}")
    report = MetricReport()
    for stem in common:
        report.add(stem, read_image(restored[stem]), read_image(reference[stem]))
    return report


# -- prompt feature diagnostic ----------------------------------------------


@torch.no_grad()
def extract_prompt_features(model, samples, batch_size: int = 8, step: int = 1):
    """Spatially pooled prompt-block outputs per image.

    Each image is fed as both the state and the condition at ``step``
    (full resolution in the default schedule), so features depend on the
    pixels alone. Returns ``{block: (features (n, C_block), labels)}``.
    """
    model.eval()
    ref = next(model.parameters())
    feats: dict[int, list[np.ndarray]] = {}
    labels = [s.label for s in samples]
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        cond = torch.from_numpy(np.stack([s.corrupted for s in chunk])).to(ref.dtype)

        def hook(k, x):
            feats.setdefault(k, []).append(x.mean(dim=(2, 3)).cpu().numpy().astype(np.float64))

        model(cond, cond, step, prompt_hook=hook)
    return {k: (np.concatenate(v), list(labels)) for k, v in sorted(feats.items())}


def cluster_table(features_by_block) -> list[dict]:
    rows = []
    for block, (feats, labels) in features_by_block.items():
        rows.append(
            {
                "block": block,
                "dbi": davies_bouldin(feats, labels),
                "n_samples": len(labels),
                "dim": feats.shape[1],
            }
        )
    return rows


def write_cluster_csv(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "dbi", "n_samples", "dim"])
        for r in rows:
            w.writerow([r["block"], f"{r['dbi']:.6f}", r["n_samples"], r["dim"]])
    return path
