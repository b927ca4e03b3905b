"""Self-supervised training loop: augmentation, normalization, ADAM schedule,
checkpointing and the key=value training log."""
from __future__ import annotations

import logging
import math
import time
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DataError, NumericalError
from .imageio import DatasetManifest
from .network import NetworkConfig, init_params
from .objective import LossConfig, denoise, psl_loss
from .phases import decompose

log = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    total_iterations: int = Field(5000, ge=1)
    lr_initial: float = Field(1e-4, gt=0)
    lr_drop_factor: float = Field(10.0, gt=0)
    lr_drop_points: tuple[float, ...] = (0.5, 0.75)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = Field(1, ge=1)
    pad_pixels: int = Field(16, ge=0)
    crop_size: tuple[int, int] = (64, 64)
    normalization_divisor: float = Field(2000.0, gt=0)
    seed: int = 0
    log_every: int = Field(10, ge=1)
    checkpoint_every: int = Field(1000, ge=1)
    val_every: int = Field(500, ge=1)

    @field_validator("lr_drop_points")
    @classmethod
    def _increasing(cls, v):
        if any(not 0 < p < 1 for p in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("lr_drop_points must be strictly increasing within (0, 1)")
        return v


def normalize(img, divisor: float = 2000.0):
    if divisor <= 0:
        raise ValueError("divisor must be positive")
    return img / divisor


def denormalize(img, divisor: float = 2000.0):
    if divisor <= 0:
        raise ValueError("divisor must be positive")
    return img * divisor


def augment(img: np.ndarray, rng: np.random.Generator, pad: int = 16,
            crop_size: tuple[int, int] | None = None, offset: tuple[int, int] | None = None) -> np.ndarray:
    """Zero-pad by ``pad`` on every side, then crop ``crop_size`` at a uniform random offset."""
    crop_size = tuple(crop_size or img.shape)
    padded = np.pad(img, pad, mode="constant")
    max_r = padded.shape[0] - crop_size[0]
    max_c = padded.shape[1] - crop_size[1]
    if max_r < 0 or max_c < 0:
        raise ValueError(f"crop {crop_size} larger than padded image {padded.shape}")
    if offset is None:
        offset = (int(rng.integers(max_r + 1)), int(rng.integers(max_c + 1)))
    r, c = offset
    return padded[r:r + crop_size[0], c:c + crop_size[1]]


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    lr = cfg.lr_initial
    for frac in cfg.lr_drop_points:
        if iteration >= math.floor(frac * cfg.total_iterations):
            lr /= cfg.lr_drop_factor
    return lr


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration])


def sample_batch(images: Sequence[np.ndarray], cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    batch = []
    for _ in range(cfg.batch_size):
        img = images[int(rng.integers(len(images)))]
        batch.append(augment(img, rng, cfg.pad_pixels, cfg.crop_size))
    return normalize(np.stack(batch).astype(np.float32), cfg.normalization_divisor)


def make_optimizer(net: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(net.parameters(), lr=cfg.lr_initial,
                            betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)


def optimizer_arrays(net, opt) -> tuple[dict[str, np.ndarray], int]:
    arrays, step = {}, 0
    for name, p in net.named_parameters():
        state = opt.state.get(p)
        if not state:
            continue
        arrays[f"adam.exp_avg.{name}"] = state["exp_avg"].detach().numpy()
        arrays[f"adam.exp_avg_sq.{name}"] = state["exp_avg_sq"].detach().numpy()
        step = int(state["step"])
    return arrays, step


def restore_optimizer(net, opt, extra: dict[str, np.ndarray], step: int) -> None:
    for name, p in net.named_parameters():
        key = f"adam.exp_avg.{name}"
        if key not in extra:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(step)),
            "exp_avg": torch.from_numpy(extra[key].copy()).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(extra[f"adam.exp_avg_sq.{name}"].copy()).to(p.dtype),
        }


def format_log_record(record: dict) -> str:
    parts = []
    for k, v in record.items():
        parts.append(f"{k}={v:.9g}" if isinstance(v, float) else f"{k}={v}")
    return " ".join(parts)


def parse_log(path) -> list[dict]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = {}
        for item in line.split():
            k, v = item.split("=", 1)
            rec[k] = int(v) if k == "iter" else float(v)
        records.append(rec)
    return records


StepFn = Callable[[torch.nn.Module, np.ndarray, np.random.Generator], tuple[torch.Tensor, dict]]


def run_training(net: torch.nn.Module, images: Sequence[np.ndarray], cfg: TrainConfig, step_fn: StepFn,
                 out_dir=None, start_iteration: int = 0, optimizer=None,
                 validate: Callable[[torch.nn.Module], float] | None = None,
                 stop_at: int | None = None) -> list[dict]:
    """Generic ADAM loop shared by the PSL trainer and the N2V baseline.

    ``step_fn`` turns a normalized batch into a scalar loss plus loggable
    terms. Iteration ``i`` draws its randomness from ``(seed, i)`` only, so a
    resumed run replays the same batches. ``stop_at`` ends the run early
    (the schedule still follows ``total_iterations``).
    """
    if not images:
        raise DataError("training set is empty")
    for img in images:
        if img.shape[0] + 2 * cfg.pad_pixels < cfg.crop_size[0] or img.shape[1] + 2 * cfg.pad_pixels < cfg.crop_size[1]:
            raise DataError(f"image of shape {img.shape} is too small for crop {cfg.crop_size}")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    opt = optimizer or make_optimizer(net, cfg)
    end = cfg.total_iterations if stop_at is None else min(stop_at, cfg.total_iterations)
    history = []
    log_fh = open(out_dir / "train_log.txt", "a" if start_iteration else "w") if out_dir else None
    t0 = time.perf_counter()
    net.train()
    try:
        for it in range(start_iteration, end):
            lr = lr_at(it, cfg)
            for group in opt.param_groups:
                group["lr"] = lr
            rng = iteration_rng(cfg.seed, it)
            loss, terms = step_fn(net, sample_batch(images, cfg, rng), rng)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite loss at iteration {it}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            net.iteration = it + 1
            done = it + 1
            if done % cfg.log_every == 0 or done == end:
                record = {"iter": done, "lr": lr, **terms}
                if validate is not None and (done % cfg.val_every == 0 or done == end):
                    record["val_psnr"] = float(validate(net))
                    net.train()
                record["wall"] = round(time.perf_counter() - t0, 3)
                history.append(record)
                if log_fh:
                    log_fh.write(format_log_record(record) + "\n")
                    log_fh.flush()
            if out_dir is not None and (done % cfg.checkpoint_every == 0 or done == end):
                save_training_state(out_dir / "checkpoint.ckpt", net, opt, cfg)
    finally:
        if log_fh:
            log_fh.close()
    return history


def save_training_state(path, net, opt, cfg: TrainConfig) -> None:
    extra, step = optimizer_arrays(net, opt)
    save_checkpoint(path, net, extra=extra, meta={"adam_step": step, "train_config": cfg.model_dump(mode="json")})


def resume_training_state(path, cfg: TrainConfig):
    net, header, extra = load_checkpoint(path, with_extra=True)
    opt = make_optimizer(net, cfg)
    restore_optimizer(net, opt, extra, header["meta"].get("adam_step", 0))
    return net, opt


def psl_step(loss_cfg: LossConfig) -> StepFn:
    def step(net, batch, rng):
        stack = torch.from_numpy(decompose(batch))
        stack = stack.to(next(net.parameters()).dtype)
        try:
            breakdown = psl_loss(net(stack), stack, loss_cfg)
        except ValueError as exc:
            # softplus underflow or NaN weights surface as a variance violation
            raise NumericalError(str(exc)) from exc
        return breakdown.total, breakdown.as_floats()
    return step


def load_images(manifest: DatasetManifest) -> list[np.ndarray]:
    if len(manifest) == 0:
        raise DataError("manifest is empty")
    return manifest.load_all()


def psnr_validator(pairs: Sequence[tuple[np.ndarray, np.ndarray]], divisor: float, peak: float = 2000.0):
    from .metrics import psnr

    def validate(net):
        return float(np.mean([psnr(denoise(noisy, net, divisor), ref, peak) for noisy, ref in pairs]))
    return validate


def train(images: DatasetManifest | Sequence[np.ndarray], net_cfg: NetworkConfig | None = None,
          loss_cfg: LossConfig | None = None, train_cfg: TrainConfig | None = None, out_dir=None,
          val_pairs: Sequence[tuple[np.ndarray, np.ndarray]] | None = None, resume_from=None,
          stop_at: int | None = None):
    """Train the PSL network on noisy images only.

    Returns ``(net, history)``. With ``out_dir`` set, writes
    ``train_log.txt``, a rolling ``checkpoint.ckpt`` and the final
    ``model.ckpt``.
    """
    net_cfg = net_cfg or NetworkConfig()
    loss_cfg = loss_cfg or LossConfig()
    train_cfg = train_cfg or TrainConfig()
    if isinstance(images, DatasetManifest):
        images = load_images(images)
    images = [np.asarray(img, dtype=np.float32) for img in images]
    if resume_from is not None:
        net, opt = resume_training_state(resume_from, train_cfg)
        if net.config != net_cfg:
            log.warning("resuming with the network config stored in %s", resume_from)
    else:
        net, opt = init_params(net_cfg), None
    validate = psnr_validator(val_pairs, train_cfg.normalization_divisor) if val_pairs else None
    history = run_training(net, images, train_cfg, psl_step(loss_cfg), out_dir, net.iteration, opt,
                           validate, stop_at)
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "model.ckpt", net, meta={"train_config": train_cfg.model_dump(mode="json")})
    return net, history
