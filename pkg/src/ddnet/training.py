"""Training loop: Adam, step-decay schedule, patch sampling, checkpoints.

Every random decision is derived from (seed, epoch, position) with a fresh
numpy generator, never from a mutable global stream. That makes the run a
pure function of (seed, config, data) and lets a resumed run replay the
exact batch sequence the unbroken run would have seen.
"""

from __future__ import annotations

import csv
import json
import logging
import typing
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
import torch

from .data import (
    DatasetManifest,
    PairedSample,
    flip_horizontal,
    load_pair,
    sample_patch,
    scan_dataset,
    synthetic_pair,
)
from .image_io import load_image
from .inference import enhance_image
from .losses import LossBreakdown, LossWeights, loss_total
from .metrics import MetricReport, aggregate, psnr, ssim
from .model import ModelConfig, build_model, model_from_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
GRAD_CLIP_NORM = 5.0

LOG_COLUMNS = ("step", "epoch", "lr", "lap", "coarse", "final", "total")


class TrainingError(Exception):
    """Training aborted (non-finite loss or invalid run setup)."""


@dataclass(frozen=True)
class TrainConfig:
    """Run settings; flat on purpose so a config file maps 1:1 onto fields."""

    train_root: str = ""
    synth_root: str | None = None
    eval_root: str | None = None
    out_dir: str = "runs/exp"
    epochs: int = 100
    lr0: float = 1e-3
    decay_factor: float = 0.1
    decay_every: int = 20
    batch: int = 8
    patch: int = 96
    w1: float = 0.2
    w2: float = 0.2
    w3: float = 0.6
    seed: int = 0
    checkpoint_every: int = 20
    literal_ssim_sum: bool = False
    base_channels: int = 16
    num_scales: int = 3
    use_sam: bool = True
    use_scm: bool = True
    use_gem: bool = True
    use_cem: bool = True
    prelu_init: float = 0.25

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if not 0 < self.decay_factor <= 1:
            raise ValueError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1:
            raise ValueError(f"decay_every must be >= 1, got {self.decay_every}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        divisor = 1 << (self.num_scales - 1)
        if self.patch < 1 or self.patch % divisor:
            raise ValueError(f"patch must be a positive multiple of {divisor}, got {self.patch}")
        self.model_config().validate()
        self.weights()

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            base_channels=self.base_channels,
            num_scales=self.num_scales,
            blocks_per_path=2 * self.num_scales,
            use_sam=self.use_sam,
            use_scm=self.use_scm,
            use_gem=self.use_gem,
            use_cem=self.use_cem,
            prelu_init=self.prelu_init,
        )

    def weights(self) -> LossWeights:
        # a disabled branch has no output to supervise
        return LossWeights(
            w1=self.w1 if self.use_gem else 0.0,
            w2=self.w2 if self.use_cem else 0.0,
            w3=self.w3,
        )


def load_train_config(path) -> TrainConfig:
    """Read a flat JSON object whose keys are TrainConfig fields."""
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a flat JSON object")
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys: {sorted(unknown)}")
    return TrainConfig(**raw)


def apply_overrides(cfg: TrainConfig, pairs) -> TrainConfig:
    """Apply 'key=value' strings on top of a config."""
    hints = typing.get_type_hints(TrainConfig)
    updates = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not of the form key=value")
        if key not in hints:
            raise ValueError(f"unknown config key {key!r}")
        updates[key] = _coerce(value, hints[key], key)
    return replace(cfg, **updates)


def _coerce(value: str, hint, key: str):
    if hint is bool:
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: cannot parse {value!r} as a boolean")
    if hint is int:
        return int(value)
    if hint is float:
        return float(value)
    if hint is str:
        return value
    # str | None fields
    return None if value.lower() in ("", "none", "null") else value


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Step decay: lr0 scaled by decay_factor every decay_every epochs."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    # divide by the reciprocal: 1/0.1 and 1/0.5 are exact floats, so decade
    # and halving schedules land on the literal values (1e-5, not 1e-5+ulp)
    return cfg.lr0 / (1.0 / cfg.decay_factor) ** (epoch // cfg.decay_every)


@dataclass
class TrainState:
    model: torch.nn.Module
    optimizer: torch.optim.Optimizer
    epoch: int = 0
    step: int = 0


def _stack(images) -> torch.Tensor:
    return torch.from_numpy(
        np.ascontiguousarray(np.stack([np.moveaxis(im, -1, 0) for im in images]))
    ).float()


def train_step(state: TrainState, samples, cfg: TrainConfig) -> LossBreakdown:
    """One optimization step over a list of equally sized PairedSamples."""
    if not samples:
        raise ValueError("empty batch")
    low = _stack([s.low for s in samples])
    grad_in = _stack([s.grad_in for s in samples])
    batch = PairedSample(
        low=low,
        normal=_stack([s.normal for s in samples]),
        grad_in=grad_in,
        grad_gt=_stack([s.grad_gt for s in samples]),
        id="batch",
    )
    state.model.train()
    out = state.model(low, grad_in)
    breakdown = loss_total(out, batch, cfg.weights(), literal_sum=cfg.literal_ssim_sum)
    for name in ("lap", "coarse", "final"):
        value = getattr(breakdown, name)
        value = value.item() if torch.is_tensor(value) else value
        if not np.isfinite(value):
            raise TrainingError(f"non-finite {name} loss at step {state.step}")

    state.optimizer.zero_grad()
    breakdown.total.backward()
    torch.nn.utils.clip_grad_norm_(state.model.parameters(), GRAD_CLIP_NORM)
    state.optimizer.step()
    state.step += 1
    as_float = lambda v: v.item() if torch.is_tensor(v) else float(v)
    return LossBreakdown(
        lap=as_float(breakdown.lap),
        coarse=as_float(breakdown.coarse),
        final=as_float(breakdown.final),
        total=as_float(breakdown.total),
    )


def _set_lr(optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _scan_clear_pool(root) -> list:
    pool = sorted(
        p for p in Path(root).iterdir()
        if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not pool:
        raise TrainingError(f"synth_root {root} holds no images")
    return pool


def _epoch_plan(n_real: int, n_synth: int, cfg: TrainConfig, epoch: int) -> np.ndarray:
    order = np.random.default_rng((cfg.seed, epoch)).permutation(n_real + n_synth)
    return order


def _load_sample(index: int, position: int, manifest, clear_pool, cfg, epoch) -> PairedSample:
    rng = np.random.default_rng((cfg.seed, epoch, position))
    if index < len(manifest.pairs):
        sample = load_pair(manifest.pairs[index])
    else:
        clear = load_image(clear_pool[index - len(manifest.pairs)])
        if clear.shape[2] == 1:
            clear = np.repeat(clear, 3, axis=2)
        sample = synthetic_pair(
            clear, seed=int(rng.integers(2**63)), pair_id=clear_pool[index - len(manifest.pairs)].stem
        )
    patch = min(cfg.patch, *sample.low.shape[:2])
    divisor = 1 << (cfg.num_scales - 1)
    patch -= patch % divisor
    if patch < divisor:
        raise TrainingError(f"pair {sample.id} is smaller than one scale step ({divisor} px)")
    sample = sample_patch(sample, patch, seed=int(rng.integers(2**63)))
    if rng.random() < 0.5:
        sample = flip_horizontal(sample)
    return sample


def train(cfg: TrainConfig, resume_from=None) -> Path:
    """Run the configured job; returns the final checkpoint path."""
    cfg.validate()
    if not cfg.train_root:
        raise TrainingError("train_root is not set")
    manifest = scan_dataset(cfg.train_root, split="train")
    clear_pool = _scan_clear_pool(cfg.synth_root) if cfg.synth_root else []

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        model, payload = model_from_checkpoint(resume_from)
        if ModelConfig(**payload["config"]) != cfg.model_config():
            raise TrainingError("checkpoint architecture differs from the config")
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr0, betas=ADAM_BETAS, eps=ADAM_EPS)
        if payload.get("optimizer_state"):
            optimizer.load_state_dict(payload["optimizer_state"])
        state = TrainState(model, optimizer, epoch=payload.get("epoch", 0), step=payload["step"])
    else:
        model = build_model(cfg.model_config(), cfg.seed)
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr0, betas=ADAM_BETAS, eps=ADAM_EPS)
        state = TrainState(model, optimizer)

    log_path = out_dir / "train_log.csv"
    mode = "a" if resume_from is not None and log_path.exists() else "w"
    n_total = len(manifest.pairs) + len(clear_pool)
    with open(log_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(LOG_COLUMNS)
        for epoch in range(state.epoch, cfg.epochs):
            state.epoch = epoch
            lr = lr_schedule(epoch, cfg)
            _set_lr(optimizer, lr)
            order = _epoch_plan(len(manifest.pairs), len(clear_pool), cfg, epoch)
            epoch_totals = []
            for start in range(0, n_total, cfg.batch):
                chunk = order[start : start + cfg.batch]
                samples = [
                    _load_sample(int(idx), start + j, manifest, clear_pool, cfg, epoch)
                    for j, idx in enumerate(chunk)
                ]
                breakdown = train_step(state, samples, cfg)
                writer.writerow(
                    (state.step, epoch, repr(lr), repr(breakdown.lap), repr(breakdown.coarse),
                     repr(breakdown.final), repr(breakdown.total))
                )
                epoch_totals.append(breakdown.total)
            fh.flush()
            log.info("epoch %d: lr %.2e, mean total %.5f", epoch, lr, float(np.mean(epoch_totals)))
            completed = epoch + 1
            if completed % cfg.checkpoint_every == 0 and completed < cfg.epochs:
                save_checkpoint(out_dir / f"ckpt_ep{completed:03d}.pt", model,
                                step=state.step, epoch=completed, optimizer=optimizer)
    final_path = out_dir / "model_final.pt"
    save_checkpoint(final_path, model, step=state.step, epoch=cfg.epochs, optimizer=optimizer)
    return final_path


def evaluate(model, manifest: DatasetManifest) -> MetricReport:
    """Full-resolution PSNR/SSIM over every pair in the manifest."""
    rows = []
    for entry in manifest.pairs:
        sample = load_pair(entry)
        final = enhance_image(model, sample.low)
        rows.append((sample.id, psnr(final, sample.normal), ssim(final, sample.normal)))
    return aggregate(rows)
