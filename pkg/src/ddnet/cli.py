"""Command-line entry points.

Exit code 0 on success. Failures print exactly one line to stderr in the
form `error: <category>: <message>` (categories: argument, io, format,
dataset, checkpoint, training) and return 1. Device selection comes from
the DDNET_DEVICE environment variable (default cpu).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import UnidentifiedImageError

from .benchmark import (
    DEFAULT_RESOLUTIONS,
    bench,
    format_table,
    parse_resolution,
    write_bench_csv,
    write_bench_json,
)
from .data import IMAGE_EXTENSIONS, DatasetError, scan_dataset, synthesize_folder
from .filters import extract_gradient, gradient_to_display
from .image_io import load_image, save_image
from .inference import enhance_image, enhance_tiled
from .metrics import write_report
from .model import CheckpointError, model_from_checkpoint
from .training import TrainConfig, TrainingError, apply_overrides, evaluate, load_train_config, train

# whole-image inference above this many pixels needs explicit tiling
PIXEL_LIMIT = 1 << 24


def _device():
    return os.environ.get("DDNET_DEVICE", "cpu")


def _load_model(ckpt):
    model, _ = model_from_checkpoint(ckpt)
    return model.to(_device())


def _cmd_train(args) -> int:
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    cfg = apply_overrides(cfg, args.set or [])
    final = train(cfg, resume_from=args.resume)
    print(f"final checkpoint: {final}")
    if cfg.eval_root:
        model = _load_model(final)
        report = evaluate(model, scan_dataset(cfg.eval_root, split="test"))
        out_dir = Path(cfg.out_dir)
        write_report(report, out_dir / "eval.csv", out_dir / "eval.json")
        print(
            f"eval: {len(report.per_image)} images, "
            f"PSNR {report.psnr_mean:.2f}±{report.psnr_std:.2f}, "
            f"SSIM {report.ssim_mean:.4f}±{report.ssim_std:.4f}"
        )
    return 0


def _input_images(path: Path) -> list:
    if path.is_dir():
        found = sorted(
            p for p in path.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not found:
            raise FileNotFoundError(f"no images found in {path}")
        return found
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    return [path]


def _cmd_enhance(args) -> int:
    model = _load_model(args.ckpt)
    inputs = _input_images(Path(args.input))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for src in inputs:
        img = load_image(src)
        if img.shape[2] == 1:
            img = np.repeat(img, 3, axis=2)
        pixels = img.shape[0] * img.shape[1]
        if args.tile is None and pixels > PIXEL_LIMIT:
            raise ValueError(
                f"{src.name} is {img.shape[1]}x{img.shape[0]} "
                f"({pixels / 1e6:.1f} Mpx); pass --tile to bound memory"
            )
        if args.tile is None:
            out = enhance_image(model, img)
        else:
            out = enhance_tiled(model, img, tile=args.tile)
        save_image(out, out_dir / (src.stem + ".png"))
    print(f"enhanced {len(inputs)} image(s) -> {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    model = _load_model(args.ckpt)
    manifest = scan_dataset(args.data, split="test")
    report = evaluate(model, manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report(report, out_dir / "eval.csv", out_dir / "eval.json")
    print(
        f"{len(report.per_image)} images: "
        f"PSNR {report.psnr_mean:.2f}±{report.psnr_std:.2f} dB, "
        f"SSIM {report.ssim_mean:.4f}±{report.ssim_std:.4f}"
    )
    return 0


def _cmd_synthesize(args) -> int:
    count = synthesize_folder(args.input, args.out, seed=args.seed)
    print(f"wrote {count} synthetic pair(s) -> {args.out}")
    return 0


def _cmd_bench(args) -> int:
    model = _load_model(args.ckpt)
    resolutions = (
        [parse_resolution(r) for r in args.res] if args.res else list(DEFAULT_RESOLUTIONS)
    )
    report = bench(
        model, resolutions, warmup=args.warmup, repeats=args.repeats, checkpoint=args.ckpt
    )
    print(format_table(report))
    if args.json:
        write_bench_json(report, args.json)
    if args.csv:
        write_bench_csv(report, args.csv)
    return 0


def _cmd_gradmap(args) -> int:
    img = load_image(args.input)
    save_image(gradient_to_display(extract_gradient(img)), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddnet", description="Low-light image enhancement toolkit."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training job")
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field (repeatable)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("enhance", help="enhance an image or directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, help="image file or directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tile", type=int, help="tile size for bounded-memory inference")
    p.set_defaults(fn=_cmd_enhance)

    p = sub.add_parser("eval", help="PSNR/SSIM over a paired dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset root with low/ and high/")
    p.add_argument("--out", default=".", help="directory for eval.csv / eval.json")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("synthesize", help="derive low-light pairs from clear images")
    p.add_argument("--in", dest="input", required=True, help="directory of clear images")
    p.add_argument("--out", required=True, help="output dataset root")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_synthesize)

    p = sub.add_parser("bench", help="forward-pass runtime sweep")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--res", action="append", metavar="WxH",
                   help="resolution to time (repeatable; default: the standard sweep)")
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--json", help="also write the report as JSON")
    p.add_argument("--csv", help="also write the report as CSV")
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("gradmap", help="write the display-mapped gradient map")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output image path")
    p.set_defaults(fn=_cmd_gradmap)

    return parser


_CATEGORIES = (
    (CheckpointError, "checkpoint"),
    (DatasetError, "dataset"),
    (TrainingError, "training"),
    (UnidentifiedImageError, "format"),
    (FileNotFoundError, "io"),
    (PermissionError, "io"),
    (IsADirectoryError, "io"),
    (OSError, "io"),
    (ValueError, "argument"),
)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except tuple(cls for cls, _ in _CATEGORIES) as exc:
        for cls, category in _CATEGORIES:
            if isinstance(exc, cls):
                print(f"error: {category}: {exc}", file=sys.stderr)
                return 1
        raise  # unreachable


if __name__ == "__main__":
    sys.exit(main())
