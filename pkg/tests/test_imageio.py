import json
import struct

import numpy as np
import pytest

from psldenoise.errors import DataError
from psldenoise.imageio import (DatasetManifest, Image, Profile, Roi, read_image, read_rois, write_image,
                                write_rois)


def test_raster_bytes_are_little_endian_f32(tmp_path):
    pixels = np.array([[0.0, 1000.0, 2000.5], [-1.0, 3.25, 7.0]], dtype=np.float32)
    path = write_image(tmp_path / "img", Image(pixels, (0.5, 0.75), {"case": 1}))
    raw = path.read_bytes()
    assert len(raw) == 24
    assert struct.unpack("<6f", raw) == tuple(pixels.ravel().tolist())
    meta = json.loads((tmp_path / "img.json").read_text())
    assert meta["rows"] == 2 and meta["cols"] == 3 and meta["unit"] == "shifted-HU"
    assert meta["dtype"] == "float32-le" and meta["pixel_spacing_mm"] == [0.5, 0.75]
    back = read_image(tmp_path / "img.f32")
    np.testing.assert_array_equal(back.pixels, pixels)
    assert back.pixel_spacing_mm == (0.5, 0.75) and back.provenance == {"case": 1}


def test_image_rejects_nonfinite_and_truncation(tmp_path):
    with pytest.raises(ValueError):
        write_image(tmp_path / "x", Image(np.array([[np.nan]])))
    write_image(tmp_path / "y", Image(np.zeros((2, 2), np.float32)))
    (tmp_path / "y.f32").write_bytes(b"\0" * 12)
    with pytest.raises(DataError):
        read_image(tmp_path / "y.f32")
    with pytest.raises(DataError):
        read_image(tmp_path / "missing.f32")


def test_manifest_roundtrip_and_validation(tmp_path):
    write_image(tmp_path / "a" / "c0", Image(np.ones((4, 4), np.float32)))
    m = DatasetManifest([{"path": "a/c0.f32", "rows": 4, "cols": 4, "role": "train"}], tmp_path)
    m.save(tmp_path / "m.jsonl")
    back = DatasetManifest.read(tmp_path / "m.jsonl")
    assert back.records == m.records and len(back.select("val")) == 0
    assert back.load(0).shape == (4, 4)
    (tmp_path / "bad.jsonl").write_text('{"path": "a/c0.f32"}\n')
    with pytest.raises(DataError):
        DatasetManifest.read(tmp_path / "bad.jsonl")
    wrong = DatasetManifest([{"path": "a/c0.f32", "rows": 5, "cols": 4, "role": "train"}], tmp_path)
    with pytest.raises(DataError):
        wrong.load(0)


def test_roi_file_roundtrip(tmp_path):
    rois = [Roi("flat", "flat", 1, 2, 3, 4), Roi("fg", "lesion_fg", 5, 5, 2, 2)]
    profiles = [Profile("p", "col", 7)]
    write_rois(tmp_path / "r.txt", rois, profiles)
    assert read_rois(tmp_path / "r.txt") == (rois, profiles)
    (tmp_path / "bad.txt").write_text("flat wobbly 1 2 3 4\n")
    with pytest.raises(DataError):
        read_rois(tmp_path / "bad.txt")
