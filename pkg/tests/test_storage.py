import json

import numpy as np
import pytest

from censorseg.phantom import PhantomSpec, generate_dataset
from censorseg.storage import load_dataset, read_raster, save_dataset, write_raster


def test_raster_layout_is_x_fastest(tmp_path):
    vol = np.arange(2 * 3 * 4 * 5, dtype=np.float32).reshape(2, 3, 4, 5)
    meta = write_raster(tmp_path / "v", vol, "volume", (1.0, 1.0, 2.0), seed=4)
    assert meta["dims"] == [5, 4, 3] and meta["channels"] == 2
    raw = np.fromfile(tmp_path / "v.raw", dtype="<f4")
    assert raw[:5].tolist() == [0, 1, 2, 3, 4]
    back, meta2 = read_raster(tmp_path / "v")
    np.testing.assert_array_equal(back, vol)
    assert meta2 == json.loads((tmp_path / "v.json").read_text())


def test_mask_raster(tmp_path):
    mask = (np.random.default_rng(0).random((3, 4, 5)) > 0.5).astype(np.uint8)
    write_raster(tmp_path / "m", mask, "mask", (1.0, 1.0, 1.0))
    back, meta = read_raster(tmp_path / "m")
    assert meta["dtype"] == "uint8"
    np.testing.assert_array_equal(back, mask)


def test_unknown_kind(tmp_path):
    with pytest.raises(ValueError):
        write_raster(tmp_path / "x", np.zeros(3), "label", (1, 1, 1))


def test_dataset_round_trip(tmp_path):
    spec = PhantomSpec(dims=(16, 16, 8), radius_mm=(1.0, 3.0), lesions_per_case=(1, 4), seed=21)
    ds = generate_dataset(spec, 2, 1, 2)
    save_dataset(ds, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert back.spec == ds.spec
    assert back.splits == ds.splits
    for a, b in zip(ds.cases, back.cases):
        assert a.id == b.id
        np.testing.assert_array_equal(a.volume, b.volume)
        np.testing.assert_array_equal(a.mask(), b.mask())
        assert [l.id for l in a.lesions] == [l.id for l in b.lesions]
        for la, lb in zip(a.lesions, b.lesions):
            assert la.volume_mm3 == pytest.approx(lb.volume_mm3)
            np.testing.assert_allclose(la.centroid_mm, lb.centroid_mm)
