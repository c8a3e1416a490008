"""Lesion-level detections from probability maps.

Probability volumes are ``(Z, Y, X)``; voxel coordinates are reported as
``(x, y, z)`` to match the ground-truth lesion records.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

CONNECTIVITY_RANK = {6: 1, 18: 2, 26: 3}


@dataclass
class Component3D:
    voxels: np.ndarray  # (n, 3) int (x, y, z)
    centroid_mm: tuple
    confidence: float
    volume_mm3: float

    @property
    def n_voxels(self):
        return len(self.voxels)


@dataclass
class Detection:
    component: Component3D
    is_tp: bool
    lesion_id: int | None = None
    distance_mm: float = float("inf")


@dataclass
class MatchResult:
    case_id: int
    detections: list
    gt_detected: dict = field(default_factory=dict)  # lesion id -> bool

    @property
    def n_gt(self):
        return len(self.gt_detected)

    @property
    def n_detected(self):
        return sum(self.gt_detected.values())

    def to_dict(self):
        return {
            "case_id": self.case_id,
            "gt_detected": {str(k): bool(v) for k, v in sorted(self.gt_detected.items())},
            "detections": [
                {
                    "n_voxels": d.component.n_voxels,
                    "centroid_mm": [round(c, 6) for c in d.component.centroid_mm],
                    "confidence": d.component.confidence,
                    "label": "TP" if d.is_tp else "FP",
                    "lesion_id": d.lesion_id,
                }
                for d in self.detections
            ],
        }


def binarize(prob, threshold=0.10):
    """1 where ``prob >= threshold`` (inclusive)."""
    return (np.asarray(prob) >= threshold).astype(np.uint8)


def connected_components_3d(mask, connectivity=26):
    """Maximal connected foreground sets as lists of linear (C-order) indices.

    Components are ordered by their smallest linear index.
    """
    if connectivity not in CONNECTIVITY_RANK:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    mask = np.asarray(mask)
    structure = ndimage.generate_binary_structure(3, CONNECTIVITY_RANK[connectivity])
    labels, n = ndimage.label(mask, structure=structure)
    if n == 0:
        return []
    flat = labels.ravel()
    idx = np.flatnonzero(flat)
    lab = flat[idx]
    order = np.argsort(lab, kind="stable")
    groups = np.split(idx[order], np.cumsum(np.bincount(lab, minlength=n + 1)[1:])[:-1])
    groups.sort(key=lambda g: g[0])
    return groups


def _to_xyz(linear, shape_zyx):
    z, y, x = np.unravel_index(linear, shape_zyx)
    return np.stack([x, y, z], axis=1).astype(np.int64)


def extract_components(prob, spacing, threshold=0.10, connectivity=26):
    """Binarise ``prob`` and describe each connected component."""
    prob = np.asarray(prob)
    sp = np.asarray(spacing, dtype=np.float64)
    comps = []
    flat = prob.ravel()
    for linear in connected_components_3d(binarize(prob, threshold), connectivity):
        xyz = _to_xyz(linear, prob.shape)
        comps.append(Component3D(
            voxels=xyz,
            centroid_mm=tuple(float(c) for c in (xyz * sp).mean(axis=0)),
            confidence=float(flat[linear].astype(np.float64).mean()),
            volume_mm3=float(len(xyz) * sp.prod()),
        ))
    return comps


def match(components, lesions, spacing, tol_mm=1.0, case_id=0):
    """Label each component TP iff its centroid is within ``tol_mm`` of a GT voxel centre."""
    if tol_mm <= 0:
        raise ValueError("tol_mm must be positive")
    sp = np.asarray(spacing, dtype=np.float64)
    gt_detected = {les.id: False for les in lesions}
    detections = []
    if lesions:
        pts = np.concatenate([les.voxels * sp for les in lesions])
        owner = np.concatenate([np.full(len(les.voxels), les.id) for les in lesions])
        tree = cKDTree(pts)
    for comp in components:
        if not lesions:
            detections.append(Detection(comp, False))
            continue
        dist, i = tree.query(np.asarray(comp.centroid_mm))
        if dist <= tol_mm:
            lid = int(owner[i])
            gt_detected[lid] = True
            detections.append(Detection(comp, True, lid, float(dist)))
        else:
            detections.append(Detection(comp, False, None, float(dist)))
    return MatchResult(case_id, detections, gt_detected)


def dice(a, b):
    """2|A & B| / (|A| + |B|) for voxel sets given as (n, 3) arrays or sets."""
    sa = {tuple(v) for v in np.asarray(a).reshape(-1, 3).tolist()}
    sb = {tuple(v) for v in np.asarray(b).reshape(-1, 3).tolist()}
    if not sa and not sb:
        return 1.0
    return 2.0 * len(sa & sb) / (len(sa) + len(sb))


def tp_dice(component, lesion):
    return dice(component.voxels, lesion.voxels)
