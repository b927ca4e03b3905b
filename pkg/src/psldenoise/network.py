"""Shift-invariant blind-spot network.

Four grouped extractor branches (one per phase sub-image), four fuser
sub-modules that each see only the three complementary branches, and a
1x1 predictor per phase emitting ``(mu, var_x, var_eps)`` through Softplus.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator
from torch import nn

from .phases import PHASES

# order of the three predictor channels; also the serialized order
OUTPUT_CHANNELS = ("mu", "var_x", "var_eps")


class NetworkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    extractor_layers: int = Field(4, ge=1)
    fuser_layers: int = Field(4, ge=1)
    channels_per_branch: int = Field(64, ge=1)
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1
    softplus_beta: float = Field(1.0, gt=0)
    norm_epsilon: float = Field(1e-5, gt=0)
    seed: int = 0

    @field_validator("kernel_size")
    @classmethod
    def _odd_kernel(cls, v):
        if v < 1 or v % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        return v

    @field_validator("stride")
    @classmethod
    def _unit_stride(cls, v):
        if v != 1:
            raise ValueError("only stride 1 is supported (size-preserving network)")
        return v

    def model_post_init(self, __context):
        if self.padding != self.kernel_size // 2:
            raise ValueError("padding must equal kernel_size // 2 to preserve spatial size")

    def fingerprint(self) -> str:
        # seed only affects initial values, not the parameter layout
        layout = self.model_dump(exclude={"seed"})
        blob = json.dumps(layout, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def softplus(x, beta: float = 1.0):
    """``(1/beta) * log(1 + exp(beta * x))`` without overflow for large ``|x|``."""
    if isinstance(x, torch.Tensor):
        bx = beta * x
        return (torch.clamp(bx, min=0) + torch.log1p(torch.exp(-bx.abs()))) / beta
    bx = beta * np.asarray(x, dtype=float)
    return (np.maximum(bx, 0) + np.log1p(np.exp(-np.abs(bx)))) / beta


@dataclass
class PredictorOutput:
    """Per-phase maps, each of shape (B, 4, h, w) in normalized units."""

    mu: torch.Tensor
    var_x: torch.Tensor
    var_eps: torch.Tensor

    def phase(self, index: int):
        return self.mu[:, index], self.var_x[:, index], self.var_eps[:, index]


def _block(cin: int, cout: int, cfg: NetworkConfig, groups: int = 1) -> list[nn.Module]:
    return [
        nn.Conv2d(cin, cout, cfg.kernel_size, cfg.stride, cfg.padding, groups=groups),
        nn.InstanceNorm2d(cout, eps=cfg.norm_epsilon, affine=True),
        nn.ReLU(),
    ]


class PSLNet(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        c = config.channels_per_branch
        layers: list[nn.Module] = []
        cin = 4
        for _ in range(config.extractor_layers):
            layers += _block(cin, 4 * c, config, groups=4)
            cin = 4 * c
        self.extractor = nn.Sequential(*layers)
        self.fuser = nn.ModuleList(
            nn.Sequential(*[m for _ in range(config.fuser_layers) for m in _block(3 * c, 3 * c, config)])
            for _ in PHASES
        )
        self.predictor = nn.ModuleList(nn.Conv2d(3 * c, len(OUTPUT_CHANNELS), 1) for _ in PHASES)
        self.iteration = 0

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def branch_features(self, stack: torch.Tensor) -> list[torch.Tensor]:
        feats = self.extractor(stack)
        return list(feats.split(self.config.channels_per_branch, dim=1))

    def forward(self, stack: torch.Tensor) -> PredictorOutput:
        if stack.ndim != 4 or stack.shape[1] != 4:
            raise ValueError(
                f"expected a phase stack of shape (B, 4, h, w), got {tuple(stack.shape)}"
            )
        branches = self.branch_features(stack)
        outs = []
        for e in PHASES:
            fused = self.fuser[e](torch.cat([branches[c] for c in e.complement()], dim=1))
            outs.append(softplus(self.predictor[e](fused), self.config.softplus_beta))
        out = torch.stack(outs, dim=1)  # (B, 4, 3, h, w)
        return PredictorOutput(out[:, :, 0], out[:, :, 1], out[:, :, 2])


def init_params(config: NetworkConfig) -> PSLNet:
    """Build a network with deterministic fan-in-scaled uniform weights."""
    net = PSLNet(config)
    reset_parameters(net, config.seed)
    return net


def reset_parameters(net: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in net.modules():
            if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
                w = module.weight
                fan_in = w.shape[1] * w[0, 0].numel()
                if isinstance(module, nn.ConvTranspose2d):
                    fan_in = w.shape[0] * w[0, 0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                w.copy_(torch.rand(w.shape, generator=gen, dtype=w.dtype) * 2 * bound - bound)
                if module.bias is not None:
                    b = module.bias
                    b.copy_(torch.rand(b.shape, generator=gen, dtype=b.dtype) * 2 * bound - bound)
            elif isinstance(module, (nn.InstanceNorm2d, nn.BatchNorm2d)) and module.affine:
                module.weight.fill_(1.0)
                module.bias.fill_(0.0)


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
