"""Image representation and 8-bit file I/O.

An image is a float array of shape (H, W, C) with C in {1, 3} and values in
[0, 1]. A gradient map is a float array of shape (H, W, 1) holding a signed
edge response in [-16, 16]. Everything downstream works on these two shapes.

Files are 8-bit PNG/JPEG on the way in and 8-bit PNG on the way out; floats
live at the native precision of the array (float32 for anything loaded from
disk).
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image as PILImage

# Rec. 601 luma weights.
LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the (H, W, C) shape contract and return the array unchanged."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(
            f"{name} must have shape (H, W, C) with C in {{1, 3}}, got {img.shape}"
        )
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must be at least 1x1, got {img.shape}")
    return img


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Decode an 8-bit raster file to a float32 (H, W, C) array in [0, 1].

    Grayscale files come back with C=1, color files with C=3. Alpha channels
    are dropped, not composited.
    """
    with PILImage.open(path) as handle:
        mode = handle.mode
        if mode == "P":
            handle = handle.convert("RGB")
            mode = "RGB"
        elif mode not in ("L", "LA", "RGB", "RGBA"):
            handle = handle.convert("RGB")
            mode = "RGB"
        raw = np.asarray(handle, dtype=np.uint8)
    if raw.ndim == 2:
        raw = raw[:, :, None]
    elif mode == "LA":
        raw = raw[:, :, :1]
    elif mode == "RGBA":
        raw = raw[:, :, :3]
    return raw.astype(np.float32) / np.float32(255.0)


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    """Quantize to 8 bits (round(clamp(x, 0, 1) * 255)) and write a PNG.

    Values outside [0, 1] are clamped, so unquantized enhancement output can
    be written directly. The format is always PNG, whatever the extension.
    """
    img = validate_image(img)
    data = np.asarray(img, dtype=np.float64)
    quant = np.rint(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)
    if quant.shape[2] == 1:
        pil = PILImage.fromarray(quant[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(quant, mode="RGB")
    pil.save(path, format="PNG")


def to_luma(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luma, shape (H, W, 1). Single-channel input passes through."""
    img = validate_image(img)
    if img.shape[2] == 1:
        return img
    dtype = img.dtype
    y = (
        dtype.type(LUMA_R) * img[:, :, 0]
        + dtype.type(LUMA_G) * img[:, :, 1]
        + dtype.type(LUMA_B) * img[:, :, 2]
    )
    # Convex combination; clip only absorbs float rounding at the ends.
    return np.clip(y, 0.0, 1.0)[:, :, None].astype(dtype, copy=False)
