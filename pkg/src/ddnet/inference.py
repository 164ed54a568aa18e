"""Whole-image and tiled enhancement on numpy images.

The model's scale pyramid needs H and W divisible by 2^(num_scales-1);
enhance_image hides that behind reflective padding plus center crop. For
large inputs enhance_tiled bounds peak memory by sweeping overlapping
tiles and feather-blending the seams: complementary linear ramps sum to
one inside a two-tile overlap, and the accumulated weight map normalizes
the rest (corners, shifted edge tiles).
"""

from __future__ import annotations

import numpy as np

from .filters import extract_gradient
from .image_io import validate_image
from .model import DDNet, forward_image

TILE_OVERLAP = 32


def pad_to_multiple(img: np.ndarray, divisor: int) -> tuple:
    """Reflect-pad bottom/right so both sizes divide evenly.

    Returns (padded, (orig_h, orig_w)).
    """
    h, w = img.shape[:2]
    pad_h = (-h) % divisor
    pad_w = (-w) % divisor
    if pad_h == 0 and pad_w == 0:
        return img, (h, w)
    if pad_h >= h or pad_w >= w:
        raise ValueError(f"image {h}x{w} is too small to pad to a multiple of {divisor}")
    padded = np.pad(img, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")
    return padded, (h, w)


def enhance_image(model: DDNet, low: np.ndarray) -> np.ndarray:
    """Enhance one (H, W, 3) image at full resolution."""
    low = validate_image(low, "low")
    if low.shape[2] != 3:
        raise ValueError(f"expected a 3-channel image, got {low.shape[2]} channels")
    padded, (h, w) = pad_to_multiple(low, model.config.divisor)
    grad = extract_gradient(padded).astype(np.float32)
    out = forward_image(model, padded.astype(np.float32, copy=False), grad)
    return out.final[:h, :w]


def _ramp(tile: int, overlap: int, ramp_in: bool, ramp_out: bool) -> np.ndarray:
    w = np.ones(tile, dtype=np.float64)
    n = min(overlap, tile)
    rise = np.arange(1, n + 1, dtype=np.float64) / (n + 1)
    if ramp_in:
        w[:n] = np.minimum(w[:n], rise)
    if ramp_out:
        w[-n:] = np.minimum(w[-n:], rise[::-1])
    return w


def _tile_starts(size: int, tile: int, step: int) -> list:
    if size <= tile:
        return [0]
    starts = list(range(0, size - tile + 1, step))
    if starts[-1] != size - tile:
        starts.append(size - tile)
    return starts


def enhance_tiled(model: DDNet, low: np.ndarray, tile: int,
                  overlap: int = TILE_OVERLAP) -> np.ndarray:
    """Enhance via overlapping tiles with feathered seams."""
    low = validate_image(low, "low")
    if low.shape[2] != 3:
        raise ValueError(f"expected a 3-channel image, got {low.shape[2]} channels")
    divisor = model.config.divisor
    if tile % divisor:
        raise ValueError(f"tile must be a multiple of {divisor}, got {tile}")
    if tile < 2 * overlap:
        raise ValueError(f"tile must be at least twice the overlap ({2 * overlap}), got {tile}")
    h, w = low.shape[:2]
    step = tile - overlap
    row_starts = _tile_starts(h, tile, step)
    col_starts = _tile_starts(w, tile, step)

    acc = np.zeros((h, w, 3), dtype=np.float64)
    weight = np.zeros((h, w, 1), dtype=np.float64)
    for ri, r0 in enumerate(row_starts):
        th = min(tile, h - r0)
        wr = _ramp(th, overlap, ramp_in=ri > 0, ramp_out=ri < len(row_starts) - 1)
        for ci, c0 in enumerate(col_starts):
            tw = min(tile, w - c0)
            out = enhance_image(model, low[r0 : r0 + th, c0 : c0 + tw])
            wc = _ramp(tw, overlap, ramp_in=ci > 0, ramp_out=ci < len(col_starts) - 1)
            wmap = (wr[:, None] * wc[None, :])[:, :, None]
            acc[r0 : r0 + th, c0 : c0 + tw] += out * wmap
            weight[r0 : r0 + th, c0 : c0 + tw] += wmap
    return (acc / weight).astype(np.float32)
