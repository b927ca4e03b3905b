"""Training objective and Bayesian inference rule for the PSL denoiser."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from .network import PredictorOutput
from .phases import crop_padding, decompose, pad_to_even, recompose


class LossConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    lam: float = Field(1.0, gt=0, alias="lambda")
    noise_penalty_coeff: float = 0.1
    reduction: Literal["mean", "sum"] = "mean"


@dataclass
class LossBreakdown:
    data_term: torch.Tensor
    log_variance_term: torch.Tensor
    noise_penalty_term: torch.Tensor
    prior_term: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {
            "total": float(self.total.detach()),
            "data": float(self.data_term.detach()),
            "logvar": float(self.log_variance_term.detach()),
            "penalty": float(self.noise_penalty_term.detach()),
            "prior": float(self.prior_term.detach()),
        }


def complement_mean(mu: torch.Tensor) -> torch.Tensor:
    """For each phase, the average of the other three phases' means (axis 1)."""
    return (mu.sum(dim=1, keepdim=True) - mu) / 3.0


def psl_loss(pred: PredictorOutput, targets: torch.Tensor, cfg: LossConfig | None = None) -> LossBreakdown:
    """Negative log-likelihood with the noise penalty and inter-phase Laplacian prior.

    ``targets`` is the (B, 4, h, w) stack of noisy sub-images. It is treated
    as a constant. With ``reduction="mean"`` every term is averaged over
    batch, phase and pixel.
    """
    cfg = cfg or LossConfig()
    targets = targets.detach()
    if targets.shape != pred.mu.shape:
        raise ValueError(f"target shape {tuple(targets.shape)} != prediction shape {tuple(pred.mu.shape)}")
    if bool((pred.var_x <= 0).any()) or bool((pred.var_eps <= 0).any()):
        raise ValueError("predicted variances must be strictly positive")

    var = pred.var_x + pred.var_eps
    data = (targets - pred.mu) ** 2 / var
    logvar = torch.log(var)
    penalty = -cfg.noise_penalty_coeff * pred.var_eps
    prior = (pred.mu - complement_mean(pred.mu)).abs() / cfg.lam

    reduce = torch.mean if cfg.reduction == "mean" else torch.sum
    terms = [reduce(t) for t in (data, logvar, penalty, prior)]
    return LossBreakdown(*terms, total=terms[0] + terms[1] + terms[2] + terms[3])


def posterior_combine(y, mu, var_x, var_eps):
    """Precision-weighted average of measurement ``y`` and prior mean ``mu``."""
    lib = torch if isinstance(var_x, torch.Tensor) else np
    if bool((lib.asarray(var_x) <= 0).any()) or bool((lib.asarray(var_eps) <= 0).any()):
        raise ValueError("variances must be strictly positive")
    w_y = 1.0 / var_eps
    w_mu = 1.0 / var_x
    return (y * w_y + mu * w_mu) / (w_y + w_mu)


def supervised_mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


@torch.no_grad()
def denoise(img: np.ndarray, net, divisor: float = 2000.0) -> np.ndarray:
    """Denoise one shifted-HU image with a trained network."""
    img = np.asarray(img, dtype=np.float32)
    padded, padding = pad_to_even(img)
    dtype = next(net.parameters()).dtype
    stack = torch.from_numpy(decompose(padded / np.float32(divisor))).to(dtype)[None]
    was_training = net.training
    net.eval()
    try:
        pred = net(stack)
    finally:
        net.train(was_training)
    combined = posterior_combine(stack, pred.mu, pred.var_x, pred.var_eps)
    out = recompose(combined[0]).cpu().numpy().astype(np.float64) * divisor
    return crop_padding(out, padding).astype(np.float32)
