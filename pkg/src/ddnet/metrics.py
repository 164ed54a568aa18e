"""Full-reference evaluation: PSNR, SSIM, and mean/std aggregation."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .image_io import validate_image
from .losses import SSIM_WINDOW, ssim_channel

# Sentinel for identical images; keeps report tables finite.
PSNR_CAP = 99.0


@dataclass
class MetricReport:
    per_image: list  # (image_id, psnr, ssim) rows sorted by id
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) with dynamic range 1.0, capped at 99 dB."""
    a = validate_image(a, "a")
    b = validate_image(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over channels of the single-channel SSIM."""
    a = validate_image(a, "a")
    b = validate_image(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValueError(
            f"ssim: each dimension must be >= {SSIM_WINDOW}, got {a.shape[:2]}"
        )
    vals = [ssim_channel(a[:, :, c], b[:, :, c]) for c in range(a.shape[2])]
    return float(np.mean(vals))


def aggregate(rows) -> MetricReport:
    """Mean and population std of per-image rows, sorted by image id."""
    rows = sorted(rows, key=lambda r: r[0])
    if not rows:
        raise ValueError("aggregate: no rows")
    psnrs = np.array([r[1] for r in rows], dtype=np.float64)
    ssims = np.array([r[2] for r in rows], dtype=np.float64)
    return MetricReport(
        per_image=[(r[0], float(r[1]), float(r[2])) for r in rows],
        psnr_mean=float(psnrs.mean()),
        psnr_std=float(psnrs.std()),
        ssim_mean=float(ssims.mean()),
        ssim_std=float(ssims.std()),
    )


def write_report(report: MetricReport, csv_path: str | os.PathLike, json_path: str | os.PathLike) -> None:
    """Per-image CSV plus a JSON summary, the eval command's output pair."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "psnr", "ssim"])
        for image_id, p, s in report.per_image:
            writer.writerow([image_id, f"{p:.6f}", f"{s:.6f}"])
    summary = {
        "count": len(report.per_image),
        "psnr_mean": report.psnr_mean,
        "psnr_std": report.psnr_std,
        "ssim_mean": report.ssim_mean,
        "ssim_std": report.ssim_std,
    }
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
