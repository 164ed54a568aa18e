"""Paired-dataset ingestion, synthetic low-light generation, patch sampling.

Dataset layout on disk (LOL convention): `<root>/low/*.png` and
`<root>/high/*.png`, pairs matched by identical filename. A training unit is
a PairedSample: the low/normal images plus their precomputed gradient maps.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .filters import extract_gradient
from .image_io import load_image, save_image, validate_image

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


class DatasetError(Exception):
    """Dataset discovery or decoding failed."""


@dataclass
class PairedSample:
    """One training unit; gradient maps are recomputable from the images."""

    low: np.ndarray
    normal: np.ndarray
    grad_in: np.ndarray
    grad_gt: np.ndarray
    id: str


@dataclass
class DatasetManifest:
    root: str
    pairs: list  # (low_path, normal_path, id), sorted by id
    split: str
    warnings: list  # unmatched filenames, sorted


def synthesize_lowlight(clear: np.ndarray, seed: int) -> tuple[np.ndarray, float]:
    """Darken a clear image by a seeded uniform coefficient m in [0.1, 0.9].

    Returns (clear * m, m). The multiply is elementwise in the input dtype,
    so m is recoverable from any nonzero pixel.
    """
    clear = validate_image(clear, "clear")
    m = float(np.random.default_rng(seed).uniform(0.1, 0.9))
    return clear * m, m


def synthetic_pair(clear: np.ndarray, seed: int, pair_id: str) -> PairedSample:
    """PairedSample whose low half is synthesized from a clear image."""
    low, _ = synthesize_lowlight(clear, seed)
    return PairedSample(
        low=low,
        normal=clear,
        grad_in=extract_gradient(low),
        grad_gt=extract_gradient(clear),
        id=pair_id,
    )


def _list_images(directory: Path) -> dict:
    return {
        p.name: p
        for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    }


def scan_dataset(root: str | os.PathLike, layout: str = "lol", split: str = "train") -> DatasetManifest:
    """Discover filename-matched pairs under `<root>/low` and `<root>/high`."""
    if layout != "lol":
        raise ValueError(f"unsupported layout: {layout!r}")
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root does not exist: {root}")
    low_dir = root / "low"
    high_dir = root / "high"
    if not low_dir.is_dir() or not high_dir.is_dir():
        raise DatasetError(f"expected low/ and high/ subdirectories under {root}")
    low = _list_images(low_dir)
    high = _list_images(high_dir)
    matched = sorted(set(low) & set(high))
    warnings = sorted(
        [f"low/{n} has no high counterpart" for n in set(low) - set(high)]
        + [f"high/{n} has no low counterpart" for n in set(high) - set(low)]
    )
    for message in warnings:
        log.warning("%s: %s", root, message)
    if not matched:
        raise DatasetError(f"no matching low/high filename pairs under {root}")
    pairs = sorted(
        ((str(low[name]), str(high[name]), Path(name).stem) for name in matched),
        key=lambda t: t[2],
    )
    ids = [pid for _, _, pid in pairs]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"duplicate pair ids under {root} (same stem, different extension)")
    return DatasetManifest(root=str(root), pairs=pairs, split=split, warnings=warnings)


def _as_rgb(img: np.ndarray) -> np.ndarray:
    return np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img


def load_pair(entry) -> PairedSample:
    """Load one manifest entry and attach both gradient maps.

    Grayscale files are promoted to 3 channels so every sample satisfies the
    PairedSample contract.
    """
    low_path, normal_path, pair_id = entry
    low = _as_rgb(load_image(low_path))
    normal = _as_rgb(load_image(normal_path))
    if low.shape != normal.shape:
        raise DatasetError(
            f"pair {pair_id}: size mismatch, low {low.shape} vs normal {normal.shape}"
        )
    return PairedSample(
        low=low,
        normal=normal,
        grad_in=extract_gradient(low),
        grad_gt=extract_gradient(normal),
        id=pair_id,
    )


def sample_patch(sample: PairedSample, patch: int, seed: int) -> PairedSample:
    """Cut the same seeded window from all four arrays.

    Gradient maps are cropped rather than recomputed; away from a 2-pixel
    border (the kernel radius) the crop equals recomputation.
    """
    h, w = sample.low.shape[:2]
    if patch < 1 or patch > min(h, w):
        raise ValueError(f"patch {patch} does not fit image of size {h}x{w}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - patch + 1))
    left = int(rng.integers(0, w - patch + 1))
    window = (slice(top, top + patch), slice(left, left + patch))
    return replace(
        sample,
        low=sample.low[window],
        normal=sample.normal[window],
        grad_in=sample.grad_in[window],
        grad_gt=sample.grad_gt[window],
    )


def flip_horizontal(sample: PairedSample) -> PairedSample:
    """Mirror all four arrays left-right (the only augmentation)."""
    return replace(
        sample,
        low=sample.low[:, ::-1].copy(),
        normal=sample.normal[:, ::-1].copy(),
        grad_in=sample.grad_in[:, ::-1].copy(),
        grad_gt=sample.grad_gt[:, ::-1].copy(),
    )


def synthesize_folder(clear_dir: str | os.PathLike, out_root: str | os.PathLike, seed: int) -> int:
    """Write a LOL-layout tree of synthetic pairs from a folder of clear images.

    Produces `<out>/high` (re-encoded clear images), `<out>/low` (darkened),
    and `<out>/coefficients.csv` with one (id, m) row per image. The i-th
    image in sorted order uses seed + i. Returns the number of pairs written.
    """
    clear_dir = Path(clear_dir)
    if not clear_dir.is_dir():
        raise DatasetError(f"clear-image directory does not exist: {clear_dir}")
    names = sorted(_list_images(clear_dir))
    if not names:
        raise DatasetError(f"no images found under {clear_dir}")
    out_root = Path(out_root)
    (out_root / "low").mkdir(parents=True, exist_ok=True)
    (out_root / "high").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, name in enumerate(names):
        clear = _as_rgb(load_image(clear_dir / name))
        low, m = synthesize_lowlight(clear, seed + i)
        stem = Path(name).stem
        save_image(clear, out_root / "high" / f"{stem}.png")
        save_image(low, out_root / "low" / f"{stem}.png")
        rows.append((stem, m))
    with open(out_root / "coefficients.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "m"])
        for stem, m in rows:
            writer.writerow([stem, repr(m)])
    return len(rows)
