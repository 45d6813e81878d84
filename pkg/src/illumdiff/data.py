"""Paired illumination-corruption datasets.

Exposure errors are rendered as a gain of ``2**ev`` in linear light under a
gamma-2.2 transfer curve; low-light pairs use a power-law darkening plus a
global illumination scale. Images on disk are 8-bit RGB PNGs laid out as::

    out_dir/gt/<id>.png
    out_dir/input/<id>.png
    out_dir/manifest.csv      id,label,mode,ev,gamma,illum
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

TRANSFER_GAMMA = 2.2
LABELS = ("overexposed", "underexposed", "lowlight")
MANIFEST_FIELDS = ("id", "label", "mode", "ev", "gamma", "illum")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class PairedSample:
    corrupted: np.ndarray  # (C, H, W) float32 in [0, 1]
    ground_truth: np.ndarray
    label: str
    id: str

    def __post_init__(self):
        if self.corrupted.shape != self.ground_truth.shape:
            raise ValueError(f"{self.id}: corrupted {self.corrupted.shape} != gt {self.ground_truth.shape}")
        if self.label not in LABELS:
            raise ValueError(f"{self.id}: unknown label {self.label!r}")


@dataclass
class CorruptionSpec:
    mode: str  # "ev_shift" or "lowlight"
    ev: float = 0.0
    gamma: float = 1.0
    illum: float = 1.0

    def apply(self, img: np.ndarray) -> np.ndarray:
        if self.mode == "ev_shift":
            return apply_exposure_shift(img, self.ev)
        if self.mode == "lowlight":
            return apply_lowlight(img, self.gamma, self.illum)
        raise ValueError(f"unknown corruption mode {self.mode!r}")


@dataclass
class SynthRanges:
    ev_min: float = 1.5
    ev_max: float = 3.5
    gamma_min: float = 2.0
    gamma_max: float = 4.0
    illum_min: float = 0.1
    illum_max: float = 0.5


def apply_exposure_shift(img: np.ndarray, ev: float) -> np.ndarray:
    """Scale linear-light exposure by ``2**ev`` stops and re-encode."""
    linear = np.power(np.clip(img, 0.0, 1.0), TRANSFER_GAMMA)
    shifted = np.clip(linear * 2.0**ev, 0.0, 1.0)
    return np.power(shifted, 1.0 / TRANSFER_GAMMA)


def apply_lowlight(img: np.ndarray, gamma: float, illum: float) -> np.ndarray:
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    if not 0 < illum <= 1:
        raise ValueError(f"illum must be in (0, 1], got {illum}")
    return np.clip(illum * np.power(np.clip(img, 0.0, 1.0), gamma), 0.0, 1.0)


# -- image io ---------------------------------------------------------------


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_png(img: np.ndarray) -> bytes:
    """(3, H, W) floats -> PNG bytes. Output is byte-stable for equal input."""
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img).transpose(1, 2, 0), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_png(img))
    except OSError as exc:
        raise OSError(f"cannot write image {path}: {exc}") from exc


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return arr.transpose(2, 0, 1).copy()


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# -- procedural sources -----------------------------------------------------


def procedural_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Smooth mucosa-like scene: tinted gradient, soft blobs, vignette."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    base = rng.uniform(0.35, 0.65, size=3) * np.array([1.0, 0.75, 0.65])
    direction = rng.normal(size=2)
    direction /= np.linalg.norm(direction) + 1e-12
    ramp = (xx - 0.5) * direction[0] + (yy - 0.5) * direction[1]
    img = base[:, None, None] + rng.uniform(0.1, 0.3) * ramp[None] * rng.uniform(0.5, 1.0, size=3)[:, None, None]

    for _ in range(rng.integers(2, 6)):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        ry, rx = rng.uniform(0.06, 0.25, size=2)
        d2 = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        blob = np.exp(-0.5 * d2 ** 2)
        tint = rng.uniform(-0.3, 0.3, size=3)
        img = img + tint[:, None, None] * blob[None]

    freq = rng.uniform(4.0, 10.0)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    texture = 0.03 * np.sin(freq * np.pi * xx + phase[0]) * np.sin(freq * np.pi * yy + phase[1])
    img = img + texture[None]

    r2 = (xx - 0.5) ** 2 + (yy - 0.5) ** 2
    img = img * (1.0 - 0.5 * r2)[None]
    return np.clip(img, 0.05, 0.95).astype(np.float32)


def make_source_images(out_dir, count: int, size: int = 64, seed: int = 0) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        path = out_dir / f"src_{i:05d}.png"
        write_image(path, procedural_image(rng, size))
        paths.append(path)
    return paths


def _fit(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[1:] == (size, size):
        return img
    im = Image.fromarray(to_uint8(img).transpose(1, 2, 0))
    side = min(im.size)
    left, top = (im.size[0] - side) // 2, (im.size[1] - side) // 2
    im = im.crop((left, top, left + side, top + side)).resize((size, size), Image.BICUBIC)
    return np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0


# -- dataset generation -----------------------------------------------------


def draw_spec(rng: np.random.Generator, label: str, ranges: SynthRanges) -> CorruptionSpec:
    if label == "lowlight":
        return CorruptionSpec(
            "lowlight",
            gamma=float(rng.uniform(ranges.gamma_min, ranges.gamma_max)),
            illum=float(rng.uniform(ranges.illum_min, ranges.illum_max)),
        )
    magnitude = float(rng.uniform(ranges.ev_min, ranges.ev_max))
    return CorruptionSpec("ev_shift", ev=magnitude if label == "overexposed" else -magnitude)


def generate_dataset(
    out_dir,
    count: int,
    seed: int = 0,
    source_dir=None,
    mode: str = "ev_shift",
    size: int = 64,
    ranges: SynthRanges | None = None,
) -> list[dict]:
    """Write ``count`` corrupted/clean pairs and return the manifest rows.

    In ``ev_shift`` mode labels alternate over/under starting with
    overexposed, so any even count (and any contiguous even-length tail)
    is exactly balanced. Without ``source_dir`` the clean images are
    procedural.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if mode not in ("ev_shift", "lowlight"):
        raise ValueError(f"unknown mode {mode!r}")
    ranges = ranges or SynthRanges()
    if ranges.ev_min <= 0:
        raise ValueError("ev_min must be > 0 so every pair is actually corrupted")
    sources = None
    if source_dir is not None:
        sources = list_images(source_dir)
        if not sources:
            raise FileNotFoundError(f"no readable images in {source_dir}")

    out_dir = Path(out_dir)
    try:
        for sub in ("gt", "input"):
            (out_dir / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc

    rng = np.random.default_rng(seed)
    rows = []
    for i in range(count):
        if sources is None:
            clean = procedural_image(rng, size)
        else:
            clean = _fit(read_image(sources[i % len(sources)]), size)
        clean = to_uint8(clean).astype(np.float64) / 255.0
        label = "lowlight" if mode == "lowlight" else ("overexposed" if i % 2 == 0 else "underexposed")
        spec = draw_spec(rng, label, ranges)
        corrupted = spec.apply(clean)
        sample_id = f"{i:05d}"
        write_image(out_dir / "gt" / f"{sample_id}.png", clean)
        write_image(out_dir / "input" / f"{sample_id}.png", corrupted)
        rows.append(
            {
                "id": sample_id,
                "label": label,
                "mode": spec.mode,
                "ev": f"{spec.ev:.6f}",
                "gamma": f"{spec.gamma:.6f}",
                "illum": f"{spec.illum:.6f}",
            }
        )
    write_manifest(out_dir / "manifest.csv", rows)
    return rows


def write_manifest(path, rows) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    os.replace(tmp, path)


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def split_rows(rows: list, split: str = "all", holdout: int = 0) -> list:
    """``train`` drops the last ``holdout`` rows, ``test`` keeps only them."""
    if holdout < 0 or holdout > len(rows):
        raise ValueError(f"holdout {holdout} out of range for {len(rows)} rows")
    if split == "all":
        return rows
    cut = len(rows) - holdout
    if split == "train":
        return rows[:cut]
    if split == "test":
        return rows[cut:]
    raise ValueError(f"unknown split {split!r}")


def load_paired_dataset(root, split: str = "all", holdout: int = 0) -> list[PairedSample]:
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv in {root}")
    samples = []
    for row in split_rows(read_manifest(manifest), split, holdout):
        samples.append(
            PairedSample(
                corrupted=read_image(root / "input" / f"{row['id']}.png"),
                ground_truth=read_image(root / "gt" / f"{row['id']}.png"),
                label=row["label"],
                id=row["id"],
            )
        )
    return samples
