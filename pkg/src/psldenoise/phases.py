"""2x2 phase decomposition of images into four one-pixel-shifted sub-images.

Sub-images are stacked along axis ``-3`` in the order UL, UR, LL, LR. The
functions accept numpy arrays and torch tensors with arbitrary leading
batch dimensions.
"""
from __future__ import annotations

import enum

import numpy as np
import torch


class Phase(enum.IntEnum):
    UL = 0
    UR = 1
    LL = 2
    LR = 3

    @property
    def offset(self) -> tuple[int, int]:
        return divmod(int(self), 2)

    def complement(self) -> list["Phase"]:
        return [p for p in Phase if p is not self]


PHASES = tuple(Phase)


def pad_to_even(img: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    """Replicate the last row/column so both spatial dims are even.

    Returns the padded image and ``(pad_rows, pad_cols)``, each 0 or 1, which
    :func:`crop_padding` uses to undo the padding.
    """
    img = np.asarray(img)
    pad_r = img.shape[-2] % 2
    pad_c = img.shape[-1] % 2
    if not (pad_r or pad_c):
        return img, (0, 0)
    widths = [(0, 0)] * (img.ndim - 2) + [(0, pad_r), (0, pad_c)]
    return np.pad(img, widths, mode="edge"), (pad_r, pad_c)


def crop_padding(img, padding: tuple[int, int]):
    pad_r, pad_c = padding
    rows = img.shape[-2] - pad_r
    cols = img.shape[-1] - pad_c
    return img[..., :rows, :cols]


def decompose(img):
    """Split ``img`` (..., M, N) into a phase stack (..., 4, M/2, N/2).

    Phase ``(r, c)`` holds ``img[..., 2i + r, 2j + c]``. Pure sampling, no
    interpolation.
    """
    rows, cols = img.shape[-2], img.shape[-1]
    if rows % 2 or cols % 2:
        raise ValueError(
            f"decompose needs even dimensions, got {rows}x{cols}; "
            "call pad_to_even first"
        )
    parts = [img[..., r::2, c::2] for r, c in (p.offset for p in PHASES)]
    if isinstance(img, torch.Tensor):
        return torch.stack(parts, dim=-3)
    return np.stack(parts, axis=-3)


def recompose(stack):
    """Exact inverse of :func:`decompose`."""
    if stack.ndim < 3 or stack.shape[-3] != 4:
        raise ValueError(f"expected a stack of 4 sub-images on axis -3, got shape {tuple(stack.shape)}")
    h, w = stack.shape[-2], stack.shape[-1]
    lead = tuple(stack.shape[:-3])
    if isinstance(stack, torch.Tensor):
        out = stack.new_empty(lead + (2 * h, 2 * w))
    else:
        out = np.empty(lead + (2 * h, 2 * w), dtype=stack.dtype)
    for p in PHASES:
        r, c = p.offset
        out[..., r::2, c::2] = stack[..., int(p), :, :]
    return out


def recompose_phases(parts) -> np.ndarray:
    """Recompose a sequence of four separately held sub-images.

    Unlike :func:`recompose` this validates that the parts agree in size.
    """
    parts = [np.asarray(p) for p in parts]
    if len(parts) != 4:
        raise ValueError(f"expected 4 sub-images, got {len(parts)}")
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise ValueError(f"mismatched sub-image sizes: {sorted(shapes)}")
    return recompose(np.stack(parts, axis=-3))
