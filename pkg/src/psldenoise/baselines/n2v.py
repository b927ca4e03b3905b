"""Noise2Void-style baseline: a U-Net trained to restore 25 zero-masked
pixels per iteration, MSE on the masked sites only."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field
from torch import nn

from ..checkpoint import save_checkpoint
from ..errors import ConfigError
from ..imageio import DatasetManifest
from ..network import reset_parameters


class UNetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    levels: int = Field(4, ge=1)
    base_channels: int = Field(16, ge=1)
    max_channels: int = Field(128, ge=1)
    # input standardization, in divisor-normalized units; masking happens after it
    input_shift: float = 0.0
    input_scale: float = Field(1.0, gt=0)
    seed: int = 0

    def fingerprint(self) -> str:
        return f"unet-l{self.levels}-b{self.base_channels}-m{self.max_channels}"


class N2vConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    mask_count: int = Field(25, ge=1)
    levels: int | None = None  # None: log2(min crop side) - 2
    base_channels: int = Field(16, ge=1)
    standardize: bool = True  # zero-mask in mean/std-standardized units
    seed: int = 0

    def backbone(self, crop_size: tuple[int, int], shift: float = 0.0, scale: float = 1.0) -> UNetConfig:
        levels = self.levels
        if levels is None:
            levels = max(1, int(math.log2(min(crop_size))) - 2)
        return UNetConfig(levels=levels, base_channels=self.base_channels, input_shift=shift,
                          input_scale=scale, seed=self.seed)


def _conv_block(cin, cout):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(),
                         nn.Conv2d(cout, cout, 3, padding=1), nn.ReLU())


class UNet(nn.Module):
    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        widths = [min(config.base_channels * 2 ** i, config.max_channels) for i in range(config.levels + 1)]
        self.down = nn.ModuleList()
        cin = 1
        for w in widths[:-1]:
            self.down.append(_conv_block(cin, w))
            cin = w
        self.bottleneck = _conv_block(widths[-2], widths[-1])
        self.up = nn.ModuleList()
        self.merge = nn.ModuleList()
        for lvl in reversed(range(config.levels)):
            self.up.append(nn.Conv2d(widths[lvl + 1], widths[lvl], 3, padding=1))
            self.merge.append(_conv_block(2 * widths[lvl], widths[lvl]))
        self.head = nn.Conv2d(widths[0], 1, 1)
        self.iteration = 0

    @property
    def multiple(self) -> int:
        return 2 ** self.config.levels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 1, H, W) -> (B, 1, H, W); H and W must be multiples of 2**levels."""
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottleneck(x)
        for up, merge, skip in zip(self.up, self.merge, reversed(skips)):
            x = up(F.interpolate(x, scale_factor=2, mode="nearest"))
            x = merge(torch.cat([x, skip], dim=1))
        return self.head(x)


def init_unet(config: UNetConfig) -> UNet:
    net = UNet(config)
    reset_parameters(net, config.seed)
    return net


def choose_mask_sites(shape: tuple[int, int], count: int, rng: np.random.Generator) -> np.ndarray:
    n = shape[0] * shape[1]
    if count >= n:
        raise ConfigError(f"mask_count {count} must be below the pixel count {n}")
    return rng.choice(n, size=count, replace=False)


def apply_mask(batch: torch.Tensor, sites: torch.Tensor) -> torch.Tensor:
    """Zero the flat pixel indices ``sites`` (B, K) of each (H, W) image in ``batch``."""
    masked = batch.clone()
    flat = masked.view(batch.shape[0], -1)
    flat.scatter_(1, sites, 0.0)
    return masked


def masked_loss(output: torch.Tensor, original: torch.Tensor, sites: torch.Tensor) -> torch.Tensor:
    """MSE between ``output`` and ``original`` restricted to ``sites``."""
    out = output.reshape(output.shape[0], -1).gather(1, sites)
    ref = original.reshape(original.shape[0], -1).gather(1, sites)
    return torch.mean((out - ref.detach()) ** 2)


def n2v_loss(backbone, batch: torch.Tensor, sites: torch.Tensor) -> torch.Tensor:
    """Run ``backbone`` on the masked (B, H, W) batch and score the masked sites."""
    masked = apply_mask(batch, sites)
    output = backbone(masked[:, None])[:, 0]
    return masked_loss(output, batch, sites)


def n2v_step(cfg: N2vConfig):
    def step(net, batch, rng):
        c = net.config
        x = torch.from_numpy((batch - c.input_shift) / c.input_scale).to(next(net.parameters()).dtype)
        sites = np.stack([choose_mask_sites(x.shape[1:], cfg.mask_count, rng) for _ in range(x.shape[0])])
        loss = n2v_loss(net, x, torch.from_numpy(sites))
        return loss, {"total": float(loss.detach())}
    return step


def n2v_train(images: DatasetManifest | Sequence[np.ndarray], cfg: N2vConfig | None = None,
              train_cfg=None, out_dir=None, stop_at: int | None = None):
    """Train the N2V baseline with the PSL optimizer settings; returns ``(net, history)``."""
    from ..trainer import TrainConfig, load_images, run_training

    cfg = cfg or N2vConfig()
    train_cfg = train_cfg or TrainConfig()
    if isinstance(images, DatasetManifest):
        images = load_images(images)
    images = [np.asarray(img, dtype=np.float32) for img in images]
    shift, scale = 0.0, 1.0
    if cfg.standardize:
        pixels = np.concatenate([img.ravel() for img in images]) / train_cfg.normalization_divisor
        shift, scale = float(pixels.mean()), float(pixels.std())
        if not scale > 0:
            raise ConfigError("cannot standardize constant training images")
    net = init_unet(cfg.backbone(train_cfg.crop_size, shift, scale))
    if any(s % net.multiple for s in train_cfg.crop_size):
        raise ConfigError(f"crop size {train_cfg.crop_size} must be a multiple of {net.multiple}")
    history = run_training(net, images, train_cfg, n2v_step(cfg), out_dir, stop_at=stop_at)
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "model.ckpt", net, meta={"train_config": train_cfg.model_dump(mode="json")})
    return net, history


@torch.no_grad()
def n2v_denoise(img: np.ndarray, net: UNet, divisor: float = 2000.0) -> np.ndarray:
    """Plain forward pass; the image is edge-padded up to the U-Net's size multiple."""
    img = np.asarray(img, dtype=np.float32)
    m = net.multiple
    pad_r, pad_c = (-img.shape[0]) % m, (-img.shape[1]) % m
    c = net.config
    x = (img / np.float32(divisor) - np.float32(c.input_shift)) / np.float32(c.input_scale)
    x = np.pad(x, ((0, pad_r), (0, pad_c)), mode="edge")
    was_training = net.training
    net.eval()
    try:
        out = net(torch.from_numpy(x).to(next(net.parameters()).dtype)[None, None])[0, 0]
    finally:
        net.train(was_training)
    out = out.numpy().astype(np.float64)[: img.shape[0], : img.shape[1]]
    out = (out * c.input_scale + c.input_shift) * divisor
    return out.astype(np.float32)
