"""Raw raster persistence with JSON sidecars.

Layout of a stored case directory::

    volume.raw   float32, little-endian, C order over (C, Z, Y, X): x varies fastest
    volume.json  {"kind": "volume", "dims": [X, Y, Z], "spacing": [sx, sy, sz],
                  "channels": C, "dtype": "float32-le", "order": "C,Z,Y,X", "seed": ...}
    mask.raw     uint8, C order over (Z, Y, X), 1 = lesion
    mask.json    same keys with "kind": "mask", "channels": 1, "dtype": "uint8"

The dataset manifest (``dataset.json``) holds the phantom spec, the split
assignment and, per case, every lesion's id, volume, centroid and voxels.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .phantom import Case, Dataset, Lesion, PhantomSpec, derive_seed

DTYPES = {"float32-le": "<f4", "uint8": "u1"}


def _sidecar(kind, shape_zyx, spacing, channels, dtype, seed):
    nz, ny, nx = shape_zyx
    return {
        "kind": kind,
        "dims": [int(nx), int(ny), int(nz)],
        "spacing": [float(s) for s in spacing],
        "channels": int(channels),
        "dtype": dtype,
        "order": "C,Z,Y,X" if kind == "volume" else "Z,Y,X",
        "seed": seed,
    }


def write_raster(stem, array, kind, spacing, seed=None):
    """Write ``stem.raw`` + ``stem.json``; returns the sidecar dict."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    if kind == "volume":
        arr = np.asarray(array, dtype="<f4")
        meta = _sidecar(kind, arr.shape[1:], spacing, arr.shape[0], "float32-le", seed)
    elif kind == "mask":
        arr = np.asarray(array, dtype="u1")
        meta = _sidecar(kind, arr.shape, spacing, 1, "uint8", seed)
    else:
        raise ValueError(f"unknown raster kind {kind!r}")
    arr.tofile(stem.with_suffix(".raw"))
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return meta


def read_raster(stem):
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    nx, ny, nz = meta["dims"]
    shape = (meta["channels"], nz, ny, nx) if meta["kind"] == "volume" else (nz, ny, nx)
    arr = np.fromfile(stem.with_suffix(".raw"), dtype=DTYPES[meta["dtype"]]).reshape(shape)
    return arr, meta


def save_dataset(dataset, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    spec = dataset.spec
    cases = []
    for case in dataset.cases:
        cdir = d / "cases" / f"{case.id:04d}"
        seed = derive_seed(spec.seed, case.id)
        write_raster(cdir / "volume", case.volume, "volume", case.spacing, seed)
        write_raster(cdir / "mask", case.mask(), "mask", case.spacing, seed)
        cases.append({
            "id": case.id,
            "dir": str(cdir.relative_to(d)),
            "lesions": [
                {"id": l.id, "volume_mm3": l.volume_mm3, "centroid_mm": list(l.centroid_mm),
                 "voxels": l.voxels.tolist()}
                for l in case.lesions
            ],
        })
    manifest = {"spec": spec.to_dict(), "splits": dataset.splits, "cases": cases}
    (d / "dataset.json").write_text(json.dumps(manifest, sort_keys=True))
    return d / "dataset.json"


def load_dataset(directory):
    d = Path(directory)
    manifest = json.loads((d / "dataset.json").read_text())
    spec = PhantomSpec.from_dict(manifest["spec"])
    cases = []
    for entry in manifest["cases"]:
        volume, meta = read_raster(d / entry["dir"] / "volume")
        lesions = [Lesion.from_voxels(l["id"], l["voxels"], meta["spacing"]) for l in entry["lesions"]]
        cases.append(Case(entry["id"], volume, lesions, tuple(meta["spacing"])))
    splits = {k: list(v) for k, v in manifest["splits"].items()}
    return Dataset(spec=spec, cases=cases, splits=splits)
