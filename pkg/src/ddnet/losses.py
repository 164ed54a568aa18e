"""Joint training objective: gradient consistency, coarse color, SSIM final.

Array convention: numpy arrays are channel-last ((H, W, C) images, (H, W)
maps); torch tensors are channel-first ((C, H, W) or (B, C, H, W)). Numpy
inputs produce plain floats, torch inputs produce 0-d tensors that stay on
the autograd tape. SSIM arithmetic always runs in float64; at float32 the
windowed statistics lose too much precision near the fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    """Weights for (lap, coarse, final); defaults 0.2 / 0.2 / 0.6."""

    w1: float = 0.2
    w2: float = 0.2
    w3: float = 0.6

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w3 < 0:
            raise ValueError(f"loss weights must be nonnegative, got {self}")


@dataclass
class LossBreakdown:
    """Per-component values of one objective evaluation.

    Fields are 0-d torch tensors when the inputs were tensors (total is the
    term to backpropagate) and plain floats otherwise.
    """

    lap: object
    coarse: object
    final: object
    total: object


def _to_bchw(x, context: str) -> tuple[torch.Tensor, bool]:
    """Coerce a map/image to (B, C, H, W). Returns (tensor, was_numpy)."""
    if isinstance(x, torch.Tensor):
        if x.dim() == 2:
            x = x[None, None]
        elif x.dim() == 3:
            x = x[None]
        elif x.dim() != 4:
            raise ValueError(f"{context}: expected 2-4 dims, got shape {tuple(x.shape)}")
        return x, False
    arr = np.asarray(x)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"{context}: expected (H, W) or (H, W, C), got {arr.shape}")
    t = torch.from_numpy(np.ascontiguousarray(np.moveaxis(arr, -1, 0)))[None]
    return t, True


def _congruent(a: torch.Tensor, b: torch.Tensor, context: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{context}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _result(value: torch.Tensor, as_float: bool):
    return float(value) if as_float else value


_WINDOW_CACHE: dict[torch.device, torch.Tensor] = {}


def _window(device: torch.device) -> torch.Tensor:
    win = _WINDOW_CACHE.get(device)
    if win is None:
        half = SSIM_WINDOW // 2
        u = torch.arange(-half, half + 1, dtype=torch.float64, device=device)
        g = torch.exp(-(u[:, None] ** 2 + u[None, :] ** 2) / (2.0 * SSIM_SIGMA**2))
        win = (g / g.sum())[None, None]
        _WINDOW_CACHE[device] = win
    return win


def _ssim_mean(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean local SSIM of (B, 1, H, W) inputs, float64.

    Windows must fit inside the image (the reference convention). Smaller
    maps fall back to replicate padding so every pixel still gets a window;
    the training losses need that for tiny probe inputs.
    """
    a = a.double()
    b = b.double()
    h, w = a.shape[-2:]
    if min(h, w) < SSIM_WINDOW:
        pad = SSIM_WINDOW // 2
        a = F.pad(a, (pad, pad, pad, pad), mode="replicate")
        b = F.pad(b, (pad, pad, pad, pad), mode="replicate")
    win = _window(a.device)
    mu_a = F.conv2d(a, win)
    mu_b = F.conv2d(b, win)
    var_a = F.conv2d(a * a, win) - mu_a * mu_a
    var_b = F.conv2d(b * b, win) - mu_b * mu_b
    cov = F.conv2d(a * b, win) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return (num / den).mean()


def ssim_channel(a, b):
    """SSIM of two single-channel maps (11x11 Gaussian window, sigma 1.5)."""
    ta, numpy_a = _to_bchw(a, "ssim_channel")
    tb, numpy_b = _to_bchw(b, "ssim_channel")
    _congruent(ta, tb, "ssim_channel")
    if ta.shape[1] != 1:
        raise ValueError(f"ssim_channel expects single-channel maps, got {ta.shape[1]} channels")
    return _result(_ssim_mean(ta, tb), numpy_a and numpy_b)


def loss_lap(grad_pred, grad_gt):
    """Gradient-domain l2: mean over pixels of the squared residual."""
    p, numpy_p = _to_bchw(grad_pred, "loss_lap")
    g, numpy_g = _to_bchw(grad_gt, "loss_lap")
    _congruent(p, g, "loss_lap")
    if p.shape[1] != 1:
        raise ValueError(f"loss_lap expects single-channel maps, got {p.shape[1]} channels")
    return _result(((p - g) ** 2).mean(), numpy_p and numpy_g)


def loss_coarse(coarse, gt):
    """Color-domain l2: squared residuals summed over channels, mean over pixels."""
    p, numpy_p = _to_bchw(coarse, "loss_coarse")
    g, numpy_g = _to_bchw(gt, "loss_coarse")
    _congruent(p, g, "loss_coarse")
    if p.shape[1] != 3:
        raise ValueError(f"loss_coarse expects 3-channel images, got {p.shape[1]} channels")
    return _result(((p - g) ** 2).sum(dim=1).mean(), numpy_p and numpy_g)


def loss_final(final, gt, literal_sum: bool = False):
    """SSIM objective on the final enhancement.

    Default is 1 minus the channel-mean SSIM (zero at a perfect match). With
    literal_sum=True the per-channel SSIMs are summed instead of averaged,
    which shifts the optimum to -2 but leaves the descent direction intact.
    """
    p, numpy_p = _to_bchw(final, "loss_final")
    g, numpy_g = _to_bchw(gt, "loss_final")
    _congruent(p, g, "loss_final")
    if p.shape[1] != 3:
        raise ValueError(f"loss_final expects 3-channel images, got {p.shape[1]} channels")
    b, c, h, w = p.shape
    per_channel = _ssim_mean(p.reshape(b * c, 1, h, w), g.reshape(b * c, 1, h, w))
    scale = 3.0 if literal_sum else 1.0
    return _result(1.0 - scale * per_channel, numpy_p and numpy_g)


def weighted_total(lap, coarse, final, weights: LossWeights):
    """The weighted sum w1*lap + w2*coarse + w3*final."""
    return weights.w1 * lap + weights.w2 * coarse + weights.w3 * final


def loss_total(out, sample, weights: LossWeights, literal_sum: bool = False) -> LossBreakdown:
    """Joint objective of a forward output against a paired sample.

    `out` needs final / coarse / grad_pred fields, `sample` needs normal /
    grad_gt. Absent branch outputs (ablations) are allowed only when the
    matching weight is zero; their component is reported as 0.
    """
    if out.grad_pred is None and weights.w1 != 0.0:
        raise ValueError("grad_pred is absent but w1 is nonzero; zero w1 when the gradient branch is disabled")
    if out.coarse is None and weights.w2 != 0.0:
        raise ValueError("coarse is absent but w2 is nonzero; zero w2 when the color branch is disabled")
    lap = loss_lap(out.grad_pred, sample.grad_gt) if out.grad_pred is not None else 0.0
    coarse = loss_coarse(out.coarse, sample.normal) if out.coarse is not None else 0.0
    final = loss_final(out.final, sample.normal, literal_sum=literal_sum)
    return LossBreakdown(lap, coarse, final, weighted_total(lap, coarse, final, weights))
