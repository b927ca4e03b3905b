"""Desk-scale CT data: ellipse phantoms, analytic parallel-beam projection,
quantum (Poisson) noise at a dose fraction, and ramp-filter FBP.

Lengths in phantoms are in cm, attenuation in 1/cm; geometry spacings are in
mm. Images are returned in shifted-HU (1000 * mu / mu_water).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .imageio import DatasetManifest, Image, Profile, Roi, write_image, write_rois

MU_WATER = 0.2  # 1/cm


class Geometry(BaseModel):
    """Parallel-beam geometry over 180 degrees on a square pixel grid."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    image_size: int = Field(64, ge=2)
    pixel_spacing_mm: float = Field(4.0, gt=0)
    n_detectors: int = Field(384, ge=2)
    detector_spacing_mm: float = Field(1.0, gt=0)
    n_views: int = Field(120, ge=2)

    def angles(self) -> np.ndarray:
        return np.arange(self.n_views) * (np.pi / self.n_views)

    def detector_positions_cm(self) -> np.ndarray:
        k = np.arange(self.n_detectors) - (self.n_detectors - 1) / 2
        return k * self.detector_spacing_mm / 10.0

    def pixel_centers_cm(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (x, y) grids; row 0 is the top of the image (largest y)."""
        c = (np.arange(self.image_size) - (self.image_size - 1) / 2) * self.pixel_spacing_mm / 10.0
        x, y = np.meshgrid(c, -c)
        return x, y

    def cm_to_pixel(self, x: float, y: float) -> tuple[float, float]:
        half = (self.image_size - 1) / 2
        scale = 10.0 / self.pixel_spacing_mm
        return half - y * scale, half + x * scale


@dataclass(frozen=True)
class Ellipse:
    x: float
    y: float
    a: float  # semi-axis along the rotated x direction, cm
    b: float
    mu: float  # additive attenuation, 1/cm
    angle: float = 0.0  # radians, counter-clockwise

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("ellipse semi-axes must be positive")


@dataclass
class Phantom:
    ellipses: list[Ellipse] = field(default_factory=list)

    def __add__(self, other: "Phantom") -> "Phantom":
        return Phantom(self.ellipses + other.ellipses)


@dataclass
class Sinogram:
    data: np.ndarray  # (n_views, n_detectors) line integrals
    geometry: Geometry
    I0: float | None = None
    dose_fraction: float | None = None


def mu_to_shifted_hu(mu):
    return np.asarray(mu) * (1000.0 / MU_WATER)


def shifted_hu_to_mu(value):
    return np.asarray(value) * (MU_WATER / 1000.0)


def rasterize_phantom(ph: Phantom, geom: Geometry) -> np.ndarray:
    """Point-sample the phantom at pixel centres, in shifted-HU."""
    x, y = geom.pixel_centers_cm()
    mu = np.zeros_like(x)
    for e in ph.ellipses:
        c, s = math.cos(e.angle), math.sin(e.angle)
        dx, dy = x - e.x, y - e.y
        u = dx * c + dy * s
        v = -dx * s + dy * c
        mu += np.where((u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0, e.mu, 0.0)
    return mu_to_shifted_hu(mu)


def forward_project(ph: Phantom, geom: Geometry) -> Sinogram:
    """Exact line integrals of the ellipse composition (closed-form chords)."""
    theta = geom.angles()[:, None]
    s = geom.detector_positions_cm()[None, :]
    sino = np.zeros((geom.n_views, geom.n_detectors))
    for e in ph.ellipses:
        if e.a == e.b:
            a2 = np.full_like(theta, e.a ** 2)  # exact rotational symmetry for circles
        else:
            a2 = (e.a * np.cos(theta - e.angle)) ** 2 + (e.b * np.sin(theta - e.angle)) ** 2
        t = s - (e.x * np.cos(theta) + e.y * np.sin(theta))
        chord = np.sqrt(np.clip(a2 - t ** 2, 0.0, None))
        sino += 2.0 * e.mu * e.a * e.b * chord / a2
    return Sinogram(sino, geom)


def inject_poisson(sino: Sinogram, I0: float, dose_fraction: float, rng: np.random.Generator) -> Sinogram:
    """Draw photon counts at ``dose_fraction * I0`` and return noisy line integrals.

    Zero counts are clamped to one before the log.
    """
    if I0 <= 0:
        raise ValueError("I0 must be positive")
    if not 0 < dose_fraction <= 1:
        raise ValueError("dose_fraction must lie in (0, 1]")
    if np.any(sino.data < 0):
        raise ValueError("line integrals must be non-negative")
    blank = dose_fraction * I0
    counts = rng.poisson(blank * np.exp(-sino.data))
    noisy = -np.log(np.maximum(counts, 1) / blank)
    return Sinogram(noisy, sino.geometry, I0, dose_fraction)


def ramp_filter_response(n_detectors: int, spacing_cm: float) -> np.ndarray:
    """Frequency response of the band-limited ramp on a padded grid.

    Built from the sampled spatial-domain ramp kernel, which avoids the DC
    offset of sampling ``|f|`` directly.
    """
    size = max(64, 1 << int(math.ceil(math.log2(2 * n_detectors))))
    n = np.concatenate([np.arange(0, size // 2 + 1), np.arange(-size // 2 + 1, 0)])
    h = np.zeros(size)
    h[0] = 1.0 / (4.0 * spacing_cm ** 2)
    odd = n % 2 == 1
    h[odd] = -1.0 / (np.pi * n[odd] * spacing_cm) ** 2
    return np.real(np.fft.fft(h)) * spacing_cm


def filter_sinogram(data: np.ndarray, spacing_cm: float) -> np.ndarray:
    n_det = data.shape[-1]
    response = ramp_filter_response(n_det, spacing_cm)
    spectrum = np.fft.fft(data, n=response.size, axis=-1) * response
    return np.real(np.fft.ifft(spectrum, axis=-1))[..., :n_det]


def fbp_reconstruct(sino: Sinogram, geom: Geometry | None = None) -> np.ndarray:
    """Ramp-filtered back projection with linear interpolation, in shifted-HU."""
    geom = geom or sino.geometry
    if sino.data.shape != (geom.n_views, geom.n_detectors):
        raise ValueError(
            f"sinogram shape {sino.data.shape} does not match geometry "
            f"({geom.n_views}, {geom.n_detectors})"
        )
    delta = geom.detector_spacing_mm / 10.0
    q = filter_sinogram(sino.data, delta)
    x, y = geom.pixel_centers_cm()
    x, y = x.ravel(), y.ravel()
    det_index = np.arange(geom.n_detectors, dtype=float)
    half = (geom.n_detectors - 1) / 2
    image = np.zeros(x.size)
    for view, theta in enumerate(geom.angles()):
        t = (x * math.cos(theta) + y * math.sin(theta)) / delta + half
        image += np.interp(t, det_index, q[view], left=0.0, right=0.0)
    image *= np.pi / geom.n_views
    return mu_to_shifted_hu(image.reshape(geom.image_size, geom.image_size))


# ---------------------------------------------------------------- datasets

class SimulationRecipe(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_train: int = Field(16, ge=0)
    n_val: int = Field(4, ge=0)
    seed: int = 0
    geometry: Geometry = Geometry()
    I0: float = Field(1e5, gt=0)
    normal_dose_fraction: float = Field(1.0, gt=0, le=1)
    low_dose_fraction: float = Field(0.25, gt=0, le=1)
    min_inserts: int = Field(3, ge=0)
    max_inserts: int = Field(7, ge=0)
    lesion_contrast_hu: float = 30.0

    @model_validator(mode="after")
    def _check(self):
        if self.n_train + self.n_val < 1:
            raise ValueError("recipe must produce at least one case")
        if self.max_inserts < self.min_inserts:
            raise ValueError("max_inserts < min_inserts")
        return self


# fixed layout (cm) of the evaluation regions inside every body
FLAT_CENTER = (-4.0, 3.0)
LESION_CENTER = (4.0, 3.0)
LESION_RADIUS = 1.4
LESION_BG_CENTER = (4.0, 0.0)
INSERT_HU = (250.0, 900.0, 1060.0, 1300.0, 1800.0)


def _square_roi(name, role, geom: Geometry, center_cm, size_px) -> Roi:
    r, c = geom.cm_to_pixel(*center_cm)
    return Roi(name, role, int(round(r - size_px / 2 + 0.5)), int(round(c - size_px / 2 + 0.5)), size_px, size_px)


def evaluation_rois(geom: Geometry) -> tuple[list[Roi], list[Profile]]:
    """ROIs and a line profile matching the simulator's phantom layout."""
    scale = 64 / geom.image_size * 4.0 / geom.pixel_spacing_mm
    flat_px = max(2, int(round(8 / scale)))
    lesion_px = max(2, int(round(4 / scale)))
    rois = [
        _square_roi("flat", "flat", geom, FLAT_CENTER, flat_px),
        _square_roi("lesion", "lesion_fg", geom, LESION_CENTER, lesion_px),
        _square_roi("lesion_bg", "lesion_bg", geom, LESION_BG_CENTER, lesion_px),
    ]
    row, _ = geom.cm_to_pixel(*LESION_CENTER)
    return rois, [Profile("through_lesion", "row", int(round(row)))]


def _inside(e_body: Ellipse, x, y) -> bool:
    c, s = math.cos(e_body.angle), math.sin(e_body.angle)
    dx, dy = x - e_body.x, y - e_body.y
    u, v = dx * c + dy * s, -dx * s + dy * c
    return (u / e_body.a) ** 2 + (v / e_body.b) ** 2 <= 1.0


def _circle_inside(body: Ellipse, x, y, r) -> bool:
    return all(_inside(body, x + r * math.cos(t), y + r * math.sin(t))
               for t in np.linspace(0, 2 * np.pi, 24, endpoint=False))


def random_phantom(rng: np.random.Generator, recipe: SimulationRecipe) -> Phantom:
    """Water-like body with a fixed flat region, a low-contrast lesion and random inserts."""
    body = None
    while body is None:
        cand = Ellipse(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(9.5, 11.5),
                       rng.uniform(7.5, 9.5), MU_WATER, rng.uniform(-0.15, 0.15))
        if all(_circle_inside(cand, cx, cy, r) for cx, cy, r in
               ((*FLAT_CENTER, 2.6), (*LESION_CENTER, 1.8), (*LESION_BG_CENTER, 1.5))):
            body = cand
    ellipses = [body, Ellipse(*LESION_CENTER, LESION_RADIUS, LESION_RADIUS,
                              recipe.lesion_contrast_hu * MU_WATER / 1000.0)]
    reserved = [(*FLAT_CENTER, 2.6), (*LESION_CENTER, 1.9), (*LESION_BG_CENTER, 1.6)]
    n_inserts = int(rng.integers(recipe.min_inserts, recipe.max_inserts + 1))
    for _ in range(n_inserts):
        for _attempt in range(200):
            a, b = rng.uniform(0.5, 2.0, size=2)
            x, y = rng.uniform(-body.a, body.a), rng.uniform(-body.b, body.b)
            r = max(a, b)
            if not _circle_inside(body, x, y, r + 0.2):
                continue
            if any(math.hypot(x - cx, y - cy) < r + cr for cx, cy, cr in reserved):
                continue
            value = INSERT_HU[int(rng.integers(len(INSERT_HU)))]
            ellipses.append(Ellipse(x, y, a, b, (value - 1000.0) * MU_WATER / 1000.0,
                                    rng.uniform(0, np.pi)))
            reserved.append((x, y, r + 0.2))
            break
    return Phantom(ellipses)


def simulate_case(recipe: SimulationRecipe, case: int) -> tuple[np.ndarray, np.ndarray, Phantom]:
    """Return (ndct, ldct, phantom) for one case; streams derive from (seed, case)."""
    phantom_ss, normal_ss, low_ss = np.random.SeedSequence([recipe.seed, case]).spawn(3)
    geom = recipe.geometry
    ph = random_phantom(np.random.default_rng(phantom_ss), recipe)
    clean = forward_project(ph, geom)
    nd = inject_poisson(clean, recipe.I0, recipe.normal_dose_fraction, np.random.default_rng(normal_ss))
    ld = inject_poisson(clean, recipe.I0, recipe.low_dose_fraction, np.random.default_rng(low_ss))
    return fbp_reconstruct(nd, geom), fbp_reconstruct(ld, geom), ph


def make_paired_dataset(recipe: SimulationRecipe, out_dir) -> tuple[DatasetManifest, DatasetManifest]:
    """Write aligned NDCT/LDCT images, two manifests and an ROI file under ``out_dir``."""
    out_dir = Path(out_dir)
    geom = recipe.geometry
    spacing = (geom.pixel_spacing_mm, geom.pixel_spacing_mm)
    manifests = {"ndct": [], "ldct": []}
    for case in range(recipe.n_train + recipe.n_val):
        role = "train" if case < recipe.n_train else "val"
        ndct, ldct, _ = simulate_case(recipe, case)
        name = f"case_{case:04d}"
        for kind, pixels, fraction in (("ndct", ndct, recipe.normal_dose_fraction),
                                       ("ldct", ldct, recipe.low_dose_fraction)):
            prov = {"case": case, "seed": recipe.seed, "dose_fraction": fraction, "I0": recipe.I0,
                    "kind": kind, "generator": "psldenoise.simulator"}
            write_image(out_dir / kind / name, Image(pixels.astype(np.float32), spacing, prov))
            manifests[kind].append({"path": f"{kind}/{name}.f32", "rows": geom.image_size,
                                    "cols": geom.image_size, "role": role, "case": case,
                                    "dose_fraction": fraction})
    out = []
    for kind in ("ndct", "ldct"):
        m = DatasetManifest(manifests[kind], out_dir)
        m.save(out_dir / f"{kind}_manifest.jsonl")
        out.append(m)
    rois, profiles = evaluation_rois(geom)
    write_rois(out_dir / "rois.txt", rois, profiles)
    return out[0], out[1]
