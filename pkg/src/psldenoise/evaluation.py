"""Run denoisers over aligned (noisy, reference) pairs and tabulate metrics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .imageio import Profile, Roi
from .metrics import DEFAULT_PEAK, cnr, line_profile, psnr, roi_std, ssim

Method = Callable[[np.ndarray], np.ndarray]


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)
    averages: dict[str, dict] = field(default_factory=dict)
    profiles: dict[str, dict[str, dict[str, list[float]]]] = field(default_factory=dict)

    @property
    def columns(self) -> list[str]:
        cols: list[str] = []
        for row in self.rows:
            cols += [k for k in row if k not in cols]
        return cols

    def to_json(self) -> str:
        doc = {"rows": self.rows, "averages": self.averages, "profiles": self.profiles}
        return json.dumps(_encode(doc), sort_keys=True, indent=2) + "\n"


def _encode(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return round(obj, 10)
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    return obj


def image_metrics(test: np.ndarray, ref: np.ndarray, rois: Sequence[Roi], peak: float = DEFAULT_PEAK) -> dict:
    row = {"psnr_db": psnr(test, ref, peak), "ssim": ssim(test, ref, peak)}
    for roi in rois:
        if roi.role == "flat":
            row[f"roi_std_{roi.name}"] = roi_std(test, roi)
    fg = [r for r in rois if r.role == "lesion_fg"]
    bg = [r for r in rois if r.role == "lesion_bg"]
    if fg and bg:
        row["cnr"] = cnr(test, fg[0], bg[0])
    return row


def evaluate(pairs: Sequence[tuple[str, np.ndarray, np.ndarray]], methods: Mapping[str, Method],
             rois: Sequence[Roi] = (), profiles: Sequence[Profile] = (), peak: float = DEFAULT_PEAK,
             reference_name: str | None = None) -> MetricReport:
    """Apply every method to every noisy image and score it against its reference.

    ``pairs`` holds ``(name, noisy, reference)`` triples. The report has one
    row per (image, method) plus per-method averages. With ``reference_name``
    set, the reference images are also scored against themselves under that
    name, which puts their ROI noise and CNR in the table.
    """
    if reference_name is not None:
        if reference_name in methods:
            raise ValueError(f"reference name {reference_name!r} clashes with a method")
        methods = {**methods, reference_name: None}
    report = MetricReport()
    for name, noisy, ref in pairs:
        for method, fn in methods.items():
            out = ref if fn is None else np.asarray(fn(noisy))
            if out.shape != ref.shape:
                raise ValueError(f"method {method} changed the image shape {ref.shape} -> {out.shape}")
            report.rows.append({"image": name, "method": method, **image_metrics(out, ref, rois, peak)})
            for prof in profiles:
                report.profiles.setdefault(prof.name, {}).setdefault(name, {})[method] = \
                    line_profile(out, prof).tolist()
        for prof in profiles:
            report.profiles[prof.name][name]["reference"] = line_profile(ref, prof).tolist()
    for method in methods:
        rows = [r for r in report.rows if r["method"] == method]
        keys = [k for k in rows[0] if k not in ("image", "method")] if rows else []
        report.averages[method] = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    return report


def format_table(report: MetricReport) -> str:
    """Fixed-width per-method averages, in the spirit of a results table."""
    keys = []
    for avg in report.averages.values():
        keys += [k for k in avg if k not in keys]
    header = f"{'method':<12}" + "".join(f"{k:>18}" for k in keys)
    lines = [header, "-" * len(header)]
    for method, avg in report.averages.items():
        lines.append(f"{method:<12}" + "".join(f"{avg.get(k, float('nan')):>18.4f}" for k in keys))
    return "\n".join(lines) + "\n"


def write_report(report: MetricReport, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out_dir / "report.csv", "json": out_dir / "report.json",
             "table": out_dir / "summary.txt", "profiles": out_dir / "profiles.csv"}
    cols = report.columns
    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in report.rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    paths["json"].write_text(report.to_json())
    paths["table"].write_text(format_table(report))
    with open(paths["profiles"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["profile", "image", "series", "position", "value"])
        for pname, per_image in report.profiles.items():
            for image, series in per_image.items():
                for sname, values in series.items():
                    for pos, val in enumerate(values):
                        writer.writerow([pname, image, sname, pos, repr(float(val))])
    return paths
