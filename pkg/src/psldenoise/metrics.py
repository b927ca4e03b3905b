"""Image quality metrics on shifted-HU images."""
from __future__ import annotations

import math

import numpy as np
from skimage.metrics import structural_similarity

from .imageio import Profile, Roi

DEFAULT_PEAK = 2000.0


def _pair(test, ref):
    test = np.asarray(test, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if test.shape != ref.shape:
        raise ValueError(f"shape mismatch: {test.shape} vs {ref.shape}")
    return test, ref


def psnr(test, ref, peak: float = DEFAULT_PEAK) -> float:
    """Peak signal-to-noise ratio in dB against a fixed peak; +inf for identical images."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    test, ref = _pair(test, ref)
    mse = float(np.mean((test - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def ssim(test, ref, peak: float = DEFAULT_PEAK, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5) and data range ``peak``."""
    test, ref = _pair(test, ref)
    return float(structural_similarity(test, ref, data_range=peak, gaussian_weights=True, sigma=sigma,
                                       use_sample_covariance=False, K1=k1, K2=k2))


def roi_values(img, roi: Roi) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    roi.check_bounds(img.shape)
    return img[roi.slices()]


def roi_std(img, roi: Roi) -> float:
    """Population standard deviation inside the ROI (HU and shifted-HU agree)."""
    return float(np.std(roi_values(img, roi)))


def cnr(img, fg: Roi, bg: Roi) -> float:
    """``|mean(fg) - mean(bg)| / std(bg)``."""
    if fg.overlaps(bg):
        raise ValueError(f"ROIs {fg.name} and {bg.name} overlap")
    f, b = roi_values(img, fg), roi_values(img, bg)
    return float(abs(f.mean() - b.mean()) / b.std())


def line_profile(img, profile: Profile) -> np.ndarray:
    img = np.asarray(img)
    limit = img.shape[0] if profile.axis == "row" else img.shape[1]
    if not 0 <= profile.index < limit:
        raise IndexError(f"profile {profile.name}: index {profile.index} out of range")
    line = img[profile.index, :] if profile.axis == "row" else img[:, profile.index]
    return np.array(line, dtype=np.float64)
