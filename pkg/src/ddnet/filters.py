"""Edge-detection kernels and gradient-map extraction.

The gradient map that guides the network is the response of a fixed 5x5
integer LoG kernel applied to luma. The analytic Gaussian/Laplacian/LoG
builders exist to validate that kernel against the continuous operator,
not to produce training inputs.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .image_io import to_luma, validate_image

# Fixed LoG taps. Rows sum to 1, 4, -10, 4, 1; positive mass 16.
_LOG_TAPS = (
    (0, 0, 1, 0, 0),
    (0, 1, 2, 1, 0),
    (1, 2, -16, 2, 1),
    (0, 1, 2, 1, 0),
    (0, 0, 1, 0, 0),
)

# One-sided absolute tap mass of the LoG kernel; bounds |response| on [0,1] input.
GRADIENT_BOUND = 16.0


def _check_kernel_args(sigma: float, size: int) -> None:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if size < 1 or size % 2 == 0:
        raise ValueError(f"size must be a positive odd integer, got {size}")


def _radius_grid(size: int) -> np.ndarray:
    half = size // 2
    u = np.arange(-half, half + 1, dtype=np.float64)
    return u[:, None] ** 2 + u[None, :] ** 2


def laplacian_kernel() -> np.ndarray:
    """3x3 second-derivative kernel: -4 center, +1 cross, 0 corners."""
    return np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)


def gaussian_kernel(sigma: float, size: int) -> np.ndarray:
    """Sampled 2-D Gaussian, renormalized so the taps sum to 1."""
    _check_kernel_args(sigma, size)
    taps = np.exp(-_radius_grid(size) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def log_kernel() -> np.ndarray:
    """The fixed 5x5 integer LoG kernel (production path)."""
    return np.array(_LOG_TAPS, dtype=np.float64)


def log_kernel_analytic(sigma: float, size: int) -> np.ndarray:
    """Sampled continuous LoG, mean-subtracted so the taps sum to 0.

    The continuous form is -(1/(pi*sigma^4)) * (1 - r^2/(2*sigma^2))
    * exp(-r^2/(2*sigma^2)); the center tap is negative, taps beyond the
    zero crossing at r = sigma*sqrt(2) are positive.
    """
    _check_kernel_args(sigma, size)
    rr = _radius_grid(size)
    s2 = sigma * sigma
    taps = -(1.0 / (np.pi * s2 * s2)) * (1.0 - rr / (2.0 * s2)) * np.exp(-rr / (2.0 * s2))
    return taps - taps.mean()


def convolve2d(map_: np.ndarray, kernel: np.ndarray, padding: str = "replicate") -> np.ndarray:
    """Correlate a single-channel map with a kernel at the input size.

    Correlation convention (no kernel flip; every kernel here is symmetric),
    replicate padding at the borders. Accepts (H, W) or (H, W, 1) and returns
    the same shape and dtype; arithmetic runs in float64.
    """
    if padding != "replicate":
        raise ValueError(f"unsupported padding mode: {padding!r}")
    arr = np.asarray(map_)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise ValueError(f"expected a single-channel map, got shape {arr.shape}")
        plane = arr[:, :, 0]
    elif arr.ndim == 2:
        plane = arr
    else:
        raise ValueError(f"expected a 2-D map, got shape {arr.shape}")
    if plane.size == 0:
        raise ValueError("map must be nonempty")
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {kernel.shape}")
    out = ndimage.correlate(plane.astype(np.float64), kernel, mode="nearest")
    out = out.astype(arr.dtype, copy=False)
    return out[:, :, None] if arr.ndim == 3 else out


def extract_gradient(img: np.ndarray) -> np.ndarray:
    """LoG response of the luma channel, signed, shape (H, W, 1).

    Values stay inside [-16, 16] for inputs in [0, 1]; the raw response is
    used everywhere (no rescaling).
    """
    img = validate_image(img)
    return convolve2d(to_luma(img), log_kernel())


def gradient_to_display(grad: np.ndarray) -> np.ndarray:
    """Affine map (x + 16) / 32 for dumping a gradient map as a PNG.

    Display only; never feed the result back into the numeric pipeline.
    """
    grad = np.asarray(grad)
    return np.clip((grad + GRADIENT_BOUND) / (2.0 * GRADIENT_BOUND), 0.0, 1.0).astype(
        grad.dtype, copy=False
    )
