"""On-disk formats: float32 rasters with JSON sidecars, manifests, ROI files.

See docs/formats.md for the byte-level description.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

RASTER_SUFFIX = ".f32"
SIDECAR_SUFFIX = ".json"
_F32 = np.dtype("<f4")


@dataclass
class Image:
    pixels: np.ndarray
    pixel_spacing_mm: tuple[float, float] = (1.0, 1.0)
    provenance: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix in (RASTER_SUFFIX, SIDECAR_SUFFIX):
        path = path.with_suffix("")
    return path.with_suffix(RASTER_SUFFIX), path.with_suffix(SIDECAR_SUFFIX)


def write_image(path, image: Image) -> Path:
    raster, sidecar = _paths(path)
    pixels = np.asarray(image.pixels)
    if pixels.ndim != 2:
        raise ValueError(f"images must be 2D, got shape {pixels.shape}")
    if not np.all(np.isfinite(pixels)):
        raise ValueError("image contains non-finite values")
    raster.parent.mkdir(parents=True, exist_ok=True)
    raster.write_bytes(np.ascontiguousarray(pixels, dtype=_F32).tobytes())
    meta = {
        "format": "psl-raster",
        "version": 1,
        "rows": int(pixels.shape[0]),
        "cols": int(pixels.shape[1]),
        "dtype": "float32-le",
        "order": "row-major",
        "unit": "shifted-HU",
        "pixel_spacing_mm": [float(s) for s in image.pixel_spacing_mm],
        "provenance": image.provenance,
    }
    sidecar.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return raster


def read_image(path) -> Image:
    raster, sidecar = _paths(path)
    try:
        meta = json.loads(sidecar.read_text())
        raw = raster.read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read image {raster}: {exc}") from exc
    rows, cols = meta.get("rows"), meta.get("cols")
    if meta.get("dtype") != "float32-le" or not rows or not cols:
        raise DataError(f"{sidecar}: malformed sidecar")
    if len(raw) != rows * cols * 4:
        raise DataError(f"{raster}: expected {rows * cols * 4} bytes, found {len(raw)}")
    pixels = np.frombuffer(raw, dtype=_F32).reshape(rows, cols).astype(np.float32)
    return Image(pixels, tuple(meta.get("pixel_spacing_mm", (1.0, 1.0))), meta.get("provenance", {}))


class DatasetManifest:
    """Ordered image records; each record is one JSON object per line.

    Record paths are relative to the manifest's directory.
    """

    def __init__(self, records: list[dict] | None = None, base_dir=None):
        self.records = list(records or [])
        self.base_dir = Path(base_dir) if base_dir is not None else Path(".")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def select(self, role: str | None) -> "DatasetManifest":
        recs = [r for r in self.records if role is None or r.get("role") == role]
        return DatasetManifest(recs, self.base_dir)

    def resolve(self, record: dict) -> Path:
        return self.base_dir / record["path"]

    def load(self, index: int) -> Image:
        record = self.records[index]
        img = read_image(self.resolve(record))
        if img.shape != (record["rows"], record["cols"]):
            raise DataError(f"{record['path']}: dims {img.shape} disagree with manifest")
        return img

    def load_all(self) -> list[np.ndarray]:
        return [self.load(i).pixels for i in range(len(self))]

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        path.write_text("".join(line + "\n" for line in lines))

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        records = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            for key in ("path", "rows", "cols", "role"):
                if key not in rec:
                    raise DataError(f"{path}:{lineno}: record lacks {key!r}")
            records.append(rec)
        return cls(records, path.parent)


@dataclass(frozen=True)
class Roi:
    name: str
    role: str  # flat | lesion_fg | lesion_bg
    row0: int
    col0: int
    height: int
    width: int

    def slices(self) -> tuple[slice, slice]:
        return slice(self.row0, self.row0 + self.height), slice(self.col0, self.col0 + self.width)

    def check_bounds(self, shape) -> None:
        if self.row0 < 0 or self.col0 < 0 or self.height < 1 or self.width < 1 \
                or self.row0 + self.height > shape[0] or self.col0 + self.width > shape[1]:
            raise ValueError(f"ROI {self.name} out of bounds for image {shape}")

    def overlaps(self, other: "Roi") -> bool:
        return not (self.row0 + self.height <= other.row0 or other.row0 + other.height <= self.row0
                    or self.col0 + self.width <= other.col0 or other.col0 + other.width <= self.col0)


@dataclass(frozen=True)
class Profile:
    name: str
    axis: str  # row | col
    index: int


ROI_ROLES = ("flat", "lesion_fg", "lesion_bg")


def read_rois(path) -> tuple[list[Roi], list[Profile]]:
    """Parse an ROI file.

    Lines are ``name role row0 col0 height width`` for rectangles and
    ``name profile row|col index`` for line profiles; ``#`` starts a comment.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read ROI file {path}: {exc}") from exc
    rois, profiles = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split("#", 1)[0].split()
        if not fields:
            continue
        try:
            if len(fields) == 4 and fields[1] == "profile":
                if fields[2] not in ("row", "col"):
                    raise ValueError(f"profile axis must be row or col, got {fields[2]!r}")
                profiles.append(Profile(fields[0], fields[2], int(fields[3])))
            elif len(fields) == 6 and fields[1] in ROI_ROLES:
                rois.append(Roi(fields[0], fields[1], *map(int, fields[2:])))
            else:
                raise ValueError("unrecognized line")
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return rois, profiles


def write_rois(path, rois: list[Roi], profiles: list[Profile] = ()) -> None:
    lines = ["# name role row0 col0 height width", "# name profile row|col index"]
    lines += [f"{r.name} {r.role} {r.row0} {r.col0} {r.height} {r.width}" for r in rois]
    lines += [f"{p.name} profile {p.axis} {p.index}" for p in profiles]
    Path(path).write_text("\n".join(lines) + "\n")
