"""The double-domain guided network.

Layout: the low-light image and its gradient map are concatenated to 4
channels and lifted by a stem convolution. Three paths of ScCAM blocks
follow: a peripheral encoder whose per-scale features act as skip
connections, plus the gradient-enhancement (GEM) and color-enhancement
(CEM) branches, each a full encoder-decoder over the same scale pyramid.
The fusion decoder walks back to full resolution from the concatenated
GEM/CEM/peripheral bottlenecks, merging one peripheral skip per scale
through a 1x1 convolution; together with the peripheral encoder it forms
the outer en-decoder. Every head is residual on its input (low image or
input gradient map), so the zero model is the identity.

Tensor convention: (B, C, H, W) float32. The numpy entry point is
forward_image.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .image_io import validate_image

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Checkpoint file missing, malformed, or incompatible."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults give the 16/32/64 model."""

    base_channels: int = 16
    num_scales: int = 3
    blocks_per_path: int = 6  # one encoder- and one decoder-side ScCAM per scale
    use_sam: bool = True
    use_scm: bool = True
    use_gem: bool = True
    use_cem: bool = True
    prelu_init: float = 0.25

    def validate(self) -> None:
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.num_scales < 1:
            raise ValueError(f"num_scales must be >= 1, got {self.num_scales}")
        if self.blocks_per_path != 2 * self.num_scales:
            raise ValueError(
                f"blocks_per_path must be 2*num_scales "
                f"({2 * self.num_scales} for num_scales={self.num_scales}), "
                f"got {self.blocks_per_path}"
            )

    @property
    def channels(self) -> list:
        return [self.base_channels * (1 << i) for i in range(self.num_scales)]

    @property
    def divisor(self) -> int:
        """Input H and W must be divisible by this."""
        return 1 << (self.num_scales - 1)


@dataclass
class ForwardOutput:
    """final/coarse are clamped to [0,1]; grad_pred is signed and unclamped.

    Branch outputs are None when the matching path is disabled.
    """

    final: object
    coarse: object
    grad_pred: object


def _clamp_unit(x: torch.Tensor) -> torch.Tensor:
    """Clamp to [0,1] in value, identity in gradient.

    A hard clamp zeroes the gradient of every saturated pixel; an
    early-training overshoot then freezes the image head at solid white.
    The straight-through form keeps the output contract bitwise (the
    second term is exactly zero) while letting the loss keep pulling
    saturated pixels back in range.
    """
    return x.clamp(0.0, 1.0).detach() + (x - x.detach())


class SAM(nn.Module):
    """Spatial attention: channel avg+max pool, 7x7 conv, sigmoid gate."""

    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size=7, padding=3)

    def forward(self, x):
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))


class SCM(nn.Module):
    """3x3 conv, layer norm over the whole sample, per-channel PReLU.

    GroupNorm with a single group is exactly per-sample normalization over
    (C, H, W) with per-channel affine. With use_norm off this degrades to
    conv + PReLU (the SCM ablation).
    """

    def __init__(self, channels: int, use_norm: bool = True, prelu_init: float = 0.25):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.norm = nn.GroupNorm(1, channels) if use_norm else None
        self.act = nn.PReLU(channels, init=prelu_init)

    def forward(self, x):
        x = self.conv(x)
        if self.norm is not None:
            x = self.norm(x)
        return self.act(x)


class ScCAM(nn.Module):
    """Two-branch self-calibrated residual block.

    Upper branch gates a 3x3 feature by spatial attention and calibrates it;
    lower branch stacks two calibrations; a 1x1 fusion of both is added back
    to the input. With every weight zero the block is the identity.
    """

    def __init__(self, channels: int, use_sam: bool = True, use_scm: bool = True,
                 prelu_init: float = 0.25):
        super().__init__()
        self.upper_in = nn.Conv2d(channels, channels, kernel_size=1)
        self.upper_conv = nn.Conv2d(channels, channels, kernel_size=3, padding=1)
        self.sam = SAM() if use_sam else None
        self.upper_scm = SCM(channels, use_scm, prelu_init)
        self.lower_in = nn.Conv2d(channels, channels, kernel_size=1)
        self.lower_scm1 = SCM(channels, use_scm, prelu_init)
        self.lower_scm2 = SCM(channels, use_scm, prelu_init)
        self.fuse = nn.Conv2d(2 * channels, channels, kernel_size=1)

    def forward(self, x):
        t = self.upper_in(x)
        branch = self.upper_conv(t)
        if self.sam is not None:
            branch = self.sam(t) * branch
        upper = self.upper_scm(branch)
        lower = self.lower_scm2(self.lower_scm1(self.lower_in(x)))
        return self.fuse(torch.cat([upper, lower], dim=1)) + x


class Downsample(nn.Module):
    """Stride-2 3x3 conv, doubling channels."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, 2 * channels, kernel_size=3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    """Bilinear x2 followed by a 3x3 conv halving channels."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels // 2, kernel_size=3, padding=1)

    def forward(self, x):
        x = nn.functional.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return self.conv(x)


def _make_sccams(config: ModelConfig, channel_list) -> nn.ModuleList:
    return nn.ModuleList(
        ScCAM(c, config.use_sam, config.use_scm, config.prelu_init) for c in channel_list
    )


class EncoderPath(nn.Module):
    """One ScCAM per scale with stride-2 downsampling in between.

    Returns the per-scale features; the last entry is the bottleneck.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        chans = config.channels
        self.blocks = _make_sccams(config, chans)
        self.downs = nn.ModuleList(Downsample(c) for c in chans[:-1])

    def forward(self, x):
        features = []
        for i, block in enumerate(self.blocks):
            x = block(x)
            features.append(x)
            if i < len(self.downs):
                x = self.downs[i](x)
        return features


class DecoderPath(nn.Module):
    """One ScCAM per scale walking from the bottleneck to full resolution."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        chans = config.channels
        self.blocks = _make_sccams(config, reversed(chans))
        self.ups = nn.ModuleList(Upsample(c) for c in reversed(chans[1:]))

    def forward(self, x):
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i < len(self.ups):
                x = self.ups[i](x)
        return x


class BranchPath(nn.Module):
    """A GEM/CEM branch: encoder-decoder plus a 3x3 prediction head."""

    def __init__(self, config: ModelConfig, out_channels: int):
        super().__init__()
        self.encoder = EncoderPath(config)
        self.decoder = DecoderPath(config)
        self.head = nn.Conv2d(config.base_channels, out_channels, kernel_size=3, padding=1)

    def forward(self, x):
        features = self.encoder(x)
        bottleneck = features[-1]
        return bottleneck, self.head(self.decoder(bottleneck))


class FusionDecoder(nn.Module):
    """Decoder half of the outer en-decoder.

    Starts from the 1x1-fused branch/peripheral bottlenecks and merges one
    peripheral skip per scale on the way up, again through 1x1 convolutions.
    """

    def __init__(self, config: ModelConfig, num_bottlenecks: int):
        super().__init__()
        chans = config.channels
        top = chans[-1]
        self.start_fuse = nn.Conv2d(num_bottlenecks * top, top, kernel_size=1)
        self.blocks = _make_sccams(config, reversed(chans))
        self.ups = nn.ModuleList(Upsample(c) for c in reversed(chans[1:]))
        self.skip_fuse = nn.ModuleList(
            nn.Conv2d(2 * c, c, kernel_size=1) for c in reversed(chans[:-1])
        )

    def forward(self, bottlenecks, skips):
        x = self.start_fuse(torch.cat(bottlenecks, dim=1))
        x = self.blocks[0](x)
        for i, up in enumerate(self.ups):
            x = up(x)
            x = self.skip_fuse[i](torch.cat([x, skips[-(i + 1)]], dim=1))
            x = self.blocks[i + 1](x)
        return x


class DDNet(nn.Module):
    """Full network; see the module docstring for the wiring."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.init_seed = None
        base = config.base_channels
        self.stem = nn.Conv2d(4, base, kernel_size=3, padding=1)
        self.peripheral = EncoderPath(config)
        self.gem = BranchPath(config, out_channels=1) if config.use_gem else None
        self.cem = BranchPath(config, out_channels=3) if config.use_cem else None
        num_bottlenecks = 1 + int(config.use_gem) + int(config.use_cem)
        self.fusion = FusionDecoder(config, num_bottlenecks)
        self.final_head = nn.Conv2d(base, 3, kernel_size=3, padding=1)

    def output_heads(self):
        heads = [self.final_head]
        if self.gem is not None:
            heads.append(self.gem.head)
        if self.cem is not None:
            heads.append(self.cem.head)
        return heads

    def forward(self, low: torch.Tensor, grad: torch.Tensor) -> ForwardOutput:
        if low.dim() != 4 or low.shape[1] != 3:
            raise ValueError(f"low must be (B, 3, H, W), got {tuple(low.shape)}")
        if grad.dim() != 4 or grad.shape[1] != 1:
            raise ValueError(f"grad must be (B, 1, H, W), got {tuple(grad.shape)}")
        if grad.shape[0] != low.shape[0] or grad.shape[2:] != low.shape[2:]:
            raise ValueError(
                f"low {tuple(low.shape)} and grad {tuple(grad.shape)} are not congruent"
            )
        d = self.config.divisor
        h, w = low.shape[2], low.shape[3]
        if h % d or w % d:
            raise ValueError(f"H and W must be divisible by {d}, got {h}x{w}")

        x = self.stem(torch.cat([low, grad], dim=1))
        skips = self.peripheral(x)

        bottlenecks = []
        grad_pred = None
        coarse = None
        if self.gem is not None:
            gem_bottleneck, gem_delta = self.gem(x)
            grad_pred = grad + gem_delta
            bottlenecks.append(gem_bottleneck)
        if self.cem is not None:
            cem_bottleneck, cem_delta = self.cem(x)
            coarse = _clamp_unit(low + cem_delta)
            bottlenecks.append(cem_bottleneck)
        bottlenecks.append(skips[-1])

        fused = self.fusion(bottlenecks, skips[:-1])
        final = _clamp_unit(low + self.final_head(fused))
        return ForwardOutput(final=final, coarse=coarse, grad_pred=grad_pred)


def _init_parameters(model: nn.Module, generator: torch.Generator, prelu_init: float) -> None:
    # Kaiming fan-in scaling with the PReLU slope as the leaky gain.
    gain = 2.0 / (1.0 + prelu_init * prelu_init)
    for module in model.modules():
        if isinstance(module, nn.Conv2d):
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            std = math.sqrt(gain / fan_in)
            module.weight.data.normal_(0.0, std, generator=generator)
            module.bias.data.zero_()
        elif isinstance(module, nn.GroupNorm):
            module.weight.data.fill_(1.0)
            module.bias.data.zero_()
        elif isinstance(module, nn.PReLU):
            module.weight.data.fill_(prelu_init)


def build_model(config: ModelConfig, seed: int) -> DDNet:
    """Construct and deterministically initialize the network.

    The same (config, seed) always yields bitwise-identical parameters.
    """
    config.validate()
    model = DDNet(config)
    generator = torch.Generator().manual_seed(int(seed))
    _init_parameters(model, generator, config.prelu_init)
    # Output heads start at zero so the fresh network is the identity map
    # (final == low input).  A randomly initialized head saturates the
    # residual outputs against the [0, 1] clamp and the structural term of
    # the quality loss cannot recover from binary noise.
    with torch.no_grad():
        for head in model.output_heads():
            head.weight.zero_()
            head.bias.zero_()
    model.init_seed = int(seed)
    return model


def zero_parameters(model: nn.Module) -> nn.Module:
    """Zero every parameter in place; the network becomes the identity map."""
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    return model


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def forward_image(model: DDNet, low: np.ndarray, grad: np.ndarray) -> ForwardOutput:
    """Run one (H, W, C) numpy image pair through the model.

    Input sizes must already satisfy the divisibility contract; the tiling
    and padding helpers in inference handle arbitrary sizes.
    """
    low = validate_image(low, "low")
    if low.shape[2] != 3:
        raise ValueError(f"low must have 3 channels, got {low.shape[2]}")
    grad = np.asarray(grad)
    if grad.shape != low.shape[:2] + (1,):
        raise ValueError(f"grad shape {grad.shape} does not match image {low.shape[:2]}")
    device = next(model.parameters()).device
    to_tensor = lambda a: torch.from_numpy(
        np.ascontiguousarray(np.moveaxis(a, -1, 0), dtype=np.float32)
    )[None].to(device)
    was_training = model.training
    model.eval()
    try:
        with torch.inference_mode():
            out = model(to_tensor(low), to_tensor(grad))
    finally:
        model.train(was_training)
    to_numpy = lambda t: np.moveaxis(t[0].cpu().numpy(), 0, -1) if t is not None else None
    return ForwardOutput(
        final=to_numpy(out.final), coarse=to_numpy(out.coarse), grad_pred=to_numpy(out.grad_pred)
    )


def save_checkpoint(path, model: DDNet, step: int = 0, epoch: int = 0,
                    optimizer=None, seed=None) -> None:
    """Write a self-describing checkpoint; round-trips bitwise."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(model.config),
        "seed": model.init_seed if seed is None else int(seed),
        "step": int(step),
        "epoch": int(epoch),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    """Read and validate a checkpoint payload."""
    try:
        payload = torch.load(path, map_location="cpu")
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version = payload["format_version"]
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {version} (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    missing = {"config", "seed", "step", "model_state"} - set(payload)
    if missing:
        raise CheckpointError(f"checkpoint {path} is missing fields: {sorted(missing)}")
    return payload


def model_from_checkpoint(path_or_payload) -> tuple:
    """Rebuild the model held by a checkpoint. Returns (model, payload)."""
    payload = (
        path_or_payload
        if isinstance(path_or_payload, dict)
        else load_checkpoint(path_or_payload)
    )
    try:
        config = ModelConfig(**payload["config"])
    except TypeError as exc:
        raise CheckpointError(f"bad config in checkpoint: {exc}") from exc
    model = DDNet(config)
    model.load_state_dict(payload["model_state"])
    model.init_seed = payload["seed"]
    return model, payload
