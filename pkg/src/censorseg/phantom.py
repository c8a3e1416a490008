"""Synthetic multi-channel lesion phantoms with exact ground truth.

Volumes are stored channel-first as ``(C, Z, Y, X)`` float arrays.  Lesion
voxels are recorded as integer ``(x, y, z)`` triples, sorted.  Lesions are
axis-aligned ellipsoids placed without overlap and with at least two
background voxels between any two lesions, so 26-connected labelling of
the ground-truth mask recovers the lesions one-to-one.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIN_GAP = 2
MAX_ATTEMPTS = 100


class PhantomError(ValueError):
    pass


def splitmix64(x):
    """One splitmix64 output for state ``x``."""
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master, index):
    """Child seed ``index`` of ``master``: splitmix64(master + index * golden)."""
    return splitmix64((int(master) + int(index) * GOLDEN) & MASK64)


@dataclass
class PhantomSpec:
    dims: tuple = (48, 48, 32)  # (X, Y, Z) voxels
    spacing: tuple = (1.0, 1.0, 1.0)  # mm per voxel along (x, y, z)
    channels: int = 4
    lesions_per_case: tuple = (5, 15)
    radius_mm: tuple = (1.5, 12.0)
    lesion_contrast: tuple = (0.5, 1.5)
    background_texture: float = 0.5
    texture_scale_mm: float = 3.0
    noise_sigma: float = 0.3
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.lesions_per_case = tuple(int(n) for n in self.lesions_per_case)
        self.radius_mm = tuple(float(r) for r in self.radius_mm)
        self.lesion_contrast = tuple(float(c) for c in self.lesion_contrast)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise PhantomError(f"dims must be three positive extents, got {self.dims}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise PhantomError(f"spacing must be three positive values, got {self.spacing}")
        if self.channels < 1:
            raise PhantomError("channels must be >= 1")
        lo, hi = self.lesions_per_case
        if lo < 0 or hi < lo:
            raise PhantomError(f"bad lesions_per_case range {self.lesions_per_case}")
        rlo, rhi = self.radius_mm
        if rlo <= 0 or rhi < rlo:
            raise PhantomError(f"bad radius_mm range {self.radius_mm}")

    @property
    def voxel_volume(self):
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def to_dict(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Lesion:
    id: int
    voxels: np.ndarray  # (n, 3) int (x, y, z), lexicographically sorted
    volume_mm3: float
    centroid_mm: tuple

    @classmethod
    def from_voxels(cls, lesion_id, voxels, spacing):
        voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
        voxels = voxels[np.lexsort(voxels.T[::-1])]
        sp = np.asarray(spacing, dtype=np.float64)
        vol = float(len(voxels) * sp.prod())
        centroid = tuple(float(c) for c in (voxels * sp).mean(axis=0))
        return cls(lesion_id, voxels, vol, centroid)

    @property
    def n_voxels(self):
        return len(self.voxels)

    @property
    def diameter_mm(self):
        return equivalent_diameter(self.volume_mm3)


def equivalent_diameter(volume_mm3):
    """Diameter of the sphere with the given volume."""
    return 2.0 * (3.0 * volume_mm3 / (4.0 * np.pi)) ** (1.0 / 3.0)


@dataclass
class Case:
    id: int
    volume: np.ndarray  # (C, Z, Y, X) float32
    lesions: list
    spacing: tuple = (1.0, 1.0, 1.0)

    @property
    def shape_zyx(self):
        return self.volume.shape[1:]

    def mask(self, lesion_ids=None):
        keep = self.lesions if lesion_ids is None else [l for l in self.lesions if l.id in lesion_ids]
        return rasterize_mask(keep, self.shape_zyx)


@dataclass
class Dataset:
    spec: PhantomSpec
    cases: list
    splits: dict = field(default_factory=dict)  # name -> list of case ids

    def case(self, case_id):
        return self._index()[case_id]

    def _index(self):
        return {c.id: c for c in self.cases}

    def split(self, name):
        idx = self._index()
        return [idx[i] for i in self.splits.get(name, [])]

    @property
    def train(self):
        return self.split("train")

    @property
    def val(self):
        return self.split("val")

    @property
    def test(self):
        return self.split("test")


def rasterize_mask(lesions, shape_zyx):
    """Binary ``(Z, Y, X)`` uint8 mask, 1 wherever any lesion has a voxel."""
    mask = np.zeros(shape_zyx, dtype=np.uint8)
    for les in lesions:
        v = les.voxels
        if len(v):
            mask[v[:, 2], v[:, 1], v[:, 0]] = 1
    return mask


def _ellipsoid_voxels(center, axes, spacing, shape_zyx):
    """Voxel (x, y, z) triples whose centres fall inside the ellipsoid (mm)."""
    sp = np.asarray(spacing)
    c = np.asarray(center)
    ax = np.asarray(axes)
    lo = np.floor((c - ax) / sp).astype(int)
    hi = np.ceil((c + ax) / sp).astype(int)
    dims_xyz = np.array(shape_zyx[::-1])
    if (lo < 0).any() or (hi >= dims_xyz).any():
        return None
    xs, ys, zs = (np.arange(lo[i], hi[i] + 1) for i in range(3))
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    r2 = ((gx * sp[0] - c[0]) / ax[0]) ** 2 + ((gy * sp[1] - c[1]) / ax[1]) ** 2 + ((gz * sp[2] - c[2]) / ax[2]) ** 2
    inside = r2 <= 1.0
    if not inside.any():
        # sub-voxel lesion: keep the voxel nearest the centre
        near = np.rint(c / sp).astype(int)
        return near.reshape(1, 3)
    return np.stack([gx[inside], gy[inside], gz[inside]], axis=1)


def _smooth_field(rng, shape, sigma_vox):
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma_vox, mode="wrap")
    sd = f.std()
    return f / sd if sd > 0 else f


def generate_case(spec, case_seed, n_lesions=None, case_id=None):
    """Build one phantom case, deterministic in ``(spec.seed, case_seed)``.

    ``n_lesions`` overrides the draw from ``spec.lesions_per_case`` (used for
    the stratified test split).
    """
    rng = np.random.default_rng(derive_seed(spec.seed, case_seed))
    nx, ny, nz = spec.dims
    shape = (nz, ny, nx)
    sp = np.asarray(spec.spacing)
    extent_mm = np.array(spec.dims) * sp

    if n_lesions is None:
        n_lesions = int(rng.integers(spec.lesions_per_case[0], spec.lesions_per_case[1] + 1))
    rlo, rhi = spec.radius_mm
    if n_lesions > 0 and (2 * rlo > extent_mm - sp).any():
        raise PhantomError(
            f"dims {spec.dims} at spacing {spec.spacing} too small for a lesion of radius {rlo} mm"
        )

    occupied = np.zeros(shape, dtype=bool)
    footprint = np.ones((2 * MIN_GAP + 1,) * 3, dtype=bool)
    voxel_sets = []
    for k in range(n_lesions):
        placed = None
        for _ in range(MAX_ATTEMPTS):
            r = float(np.exp(rng.uniform(np.log(rlo), np.log(rhi))))
            axes = np.clip(r * rng.uniform(0.8, 1.25, size=3), rlo, rhi)
            lo = axes
            hi = extent_mm - sp - axes
            if (hi < lo).any():
                continue
            center = rng.uniform(lo, hi)
            vox = _ellipsoid_voxels(center, axes, sp, shape)
            if vox is None:
                continue
            if occupied[vox[:, 2], vox[:, 1], vox[:, 0]].any():
                continue
            placed = vox
            break
        if placed is None:
            log.warning("case seed %s: dropped lesion %d after %d placement attempts", case_seed, k, MAX_ATTEMPTS)
            continue
        voxel_sets.append(placed)
        blob = np.zeros(shape, dtype=bool)
        blob[placed[:, 2], placed[:, 1], placed[:, 0]] = True
        occupied |= ndimage.binary_dilation(blob, structure=footprint)

    lesions = [Lesion.from_voxels(i, v, spec.spacing) for i, v in enumerate(voxel_sets)]

    sigma_vox = spec.texture_scale_mm / sp[::-1]
    vol = np.empty((spec.channels,) + shape, dtype=np.float64)
    for ch in range(spec.channels):
        vol[ch] = spec.background_texture * _smooth_field(rng, shape, sigma_vox)
    clo, chi = spec.lesion_contrast
    for les in lesions:
        offsets = rng.uniform(clo, chi, size=spec.channels)
        v = les.voxels
        vol[:, v[:, 2], v[:, 1], v[:, 0]] += offsets[:, None]
    vol += spec.noise_sigma * rng.standard_normal(vol.shape)

    return Case(id=case_seed if case_id is None else case_id, volume=vol.astype(np.float32),
                lesions=lesions, spacing=spec.spacing)


DEFAULT_TEST_BANDS = ((1, 3), (4, 10), (11, 15))


def generate_dataset(spec, n_train, n_val, n_test, test_bands=DEFAULT_TEST_BANDS):
    """Train/val/test phantom cases with a lesion-count stratified test split.

    Case ids run 0..n-1 in train, val, test order; case ``i`` is generated
    from child seed ``derive_seed(spec.seed, i)``.  Test case ``j`` draws its
    lesion count from band ``j % len(test_bands)``, so the bands are equally
    represented to within one case.
    """
    if min(n_train, n_val, n_test) < 0:
        raise ValueError("split sizes must be non-negative")
    cases, splits = [], {"train": [], "val": [], "test": []}
    cid = 0
    for name, n in (("train", n_train), ("val", n_val)):
        for _ in range(n):
            cases.append(generate_case(spec, cid))
            splits[name].append(cid)
            cid += 1
    for j in range(n_test):
        band = test_bands[j % len(test_bands)]
        draw = np.random.default_rng(derive_seed(spec.seed ^ 0x7E57, cid))
        n_les = int(draw.integers(band[0], band[1] + 1))
        cases.append(generate_case(spec, cid, n_lesions=n_les))
        splits["test"].append(cid)
        cid += 1
    return Dataset(spec=spec, cases=cases, splits=splits)


def subsample_split(dataset, name, count, seed):
    """Copy of ``dataset`` whose split ``name`` is a seeded random subset."""
    ids = list(dataset.splits[name])
    if count > len(ids):
        raise ValueError(f"requested {count} {name} cases but only {len(ids)} available")
    rng = np.random.default_rng(seed)
    keep = sorted(rng.choice(ids, size=count, replace=False).tolist()) if count < len(ids) else ids
    splits = dict(dataset.splits)
    splits[name] = keep
    used = set().union(*map(set, splits.values()))
    return Dataset(spec=dataset.spec, cases=[c for c in dataset.cases if c.id in used], splits=splits)
