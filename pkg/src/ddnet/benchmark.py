"""Forward-pass runtime sweep across resolutions.

Timing covers the model forward only: inputs are pre-built random tensors
(enhancement time does not depend on content for a fixed architecture), and
encode/decode never enters the timed region. Each timed pass is bracketed
by full device synchronization so accelerator queues cannot smear results.
"""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import asdict, dataclass

import torch

from .model import DDNet

DEFAULT_RESOLUTIONS = ((800, 600), (1080, 720), (2560, 1440), (3840, 2160))

# Context only, measured on an NVIDIA A40; never asserted against.
REFERENCE_GPU_SECONDS = {
    "800x600": 0.021,
    "1080x720": 0.021,
    "2560x1440": 0.023,
    "3840x2160": 0.027,
}


@dataclass(frozen=True)
class BenchRow:
    resolution: str
    width: int
    height: int
    pixels: int
    mean_seconds: float
    std_seconds: float
    fps: float


@dataclass
class BenchmarkReport:
    rows: list
    device: str
    checkpoint: str
    warmup: int
    repeats: int


def parse_resolution(text: str) -> tuple:
    """'800x600' -> (800, 600)."""
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"resolution must look like 800x600, got {text!r}")
    try:
        width, height = int(parts[0]), int(parts[1])
    except ValueError:
        raise ValueError(f"resolution must look like 800x600, got {text!r}") from None
    if width < 1 or height < 1:
        raise ValueError(f"resolution sides must be positive, got {text!r}")
    return width, height


def _sync(device: torch.device) -> None:
    if device.type == "cuda":
        torch.cuda.synchronize(device)


def bench(model: DDNet, resolutions=DEFAULT_RESOLUTIONS, warmup: int = 2,
          repeats: int = 5, checkpoint: str = "<in-memory>") -> BenchmarkReport:
    """Time the forward pass at each resolution; rows keep input order."""
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    if warmup < 1:
        raise ValueError(f"warmup must be >= 1, got {warmup}")
    divisor = model.config.divisor
    for width, height in resolutions:
        if width % divisor or height % divisor:
            raise ValueError(
                f"resolution {width}x{height} is not divisible by {divisor}"
            )

    device = next(model.parameters()).device
    model.eval()
    rows = []
    generator = torch.Generator().manual_seed(0)
    for width, height in resolutions:
        low = torch.rand(1, 3, height, width, generator=generator).to(device)
        grad = (torch.rand(1, 1, height, width, generator=generator) * 32 - 16).to(device)
        with torch.inference_mode():
            for _ in range(warmup):
                model(low, grad)
            times = []
            for _ in range(repeats):
                _sync(device)
                start = time.perf_counter()
                model(low, grad)
                _sync(device)
                times.append(time.perf_counter() - start)
        mean = statistics.mean(times)
        rows.append(
            BenchRow(
                resolution=f"{width}x{height}",
                width=width,
                height=height,
                pixels=width * height,
                mean_seconds=mean,
                std_seconds=statistics.pstdev(times),
                fps=1.0 / mean,
            )
        )
    return BenchmarkReport(
        rows=rows, device=str(device), checkpoint=str(checkpoint),
        warmup=warmup, repeats=repeats,
    )


def format_table(report: BenchmarkReport) -> str:
    lines = [
        f"device: {report.device}   checkpoint: {report.checkpoint}   "
        f"warmup: {report.warmup}   repeats: {report.repeats}",
        f"{'resolution':>12} {'mean_s':>10} {'std_s':>10} {'fps':>8}",
    ]
    for row in report.rows:
        lines.append(
            f"{row.resolution:>12} {row.mean_seconds:>10.4f} "
            f"{row.std_seconds:>10.4f} {row.fps:>8.2f}"
        )
    reference = [
        f"{label} {seconds:.3f}s"
        for label, seconds in REFERENCE_GPU_SECONDS.items()
        if any(row.resolution == label for row in report.rows)
    ]
    if reference:
        lines.append(
            "reference (A40 GPU, for context only, not a target): " + ", ".join(reference)
        )
    return "\n".join(lines)


def write_bench_json(report: BenchmarkReport, path) -> None:
    payload = {
        "device": report.device,
        "checkpoint": report.checkpoint,
        "warmup": report.warmup,
        "repeats": report.repeats,
        "rows": [asdict(row) for row in report.rows],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def write_bench_csv(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["resolution", "width", "height", "pixels",
                        "mean_seconds", "std_seconds", "fps"])
        for row in report.rows:
            writer.writerow([row.resolution, row.width, row.height, row.pixels,
                             repr(row.mean_seconds), repr(row.std_seconds), repr(row.fps)])
