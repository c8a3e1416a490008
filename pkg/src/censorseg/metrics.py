"""Lesion-level precision/recall analysis and summary statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .phantom import equivalent_diameter

DEFAULT_DIAMETER_BINS = (0.0, 2.0, 4.0, 6.0, 10.0, math.inf)
Z95 = 1.96


@dataclass
class PRCurve:
    thresholds: list
    points: list  # (precision, recall) per threshold
    n_gt: int
    n_tp: int = 0
    n_fp: int = 0

    @property
    def precision(self):
        return [p for p, _ in self.points]

    @property
    def recall(self):
        return [r for _, r in self.points]


def _pooled(match_results, duplicates_as_fp=False):
    """(confidence, lesion key or None) for every detection, most confident first.

    With ``duplicates_as_fp`` every TP after the first hit on the same lesion
    (in confidence order) is relabelled FP.
    """
    rows = []
    for mr in match_results:
        for d in mr.detections:
            key = (mr.case_id, d.lesion_id) if d.is_tp else None
            rows.append((d.component.confidence, key))
    rows.sort(key=lambda r: -r[0])
    if duplicates_as_fp:
        seen, out = set(), []
        for conf, key in rows:
            if key is not None and key in seen:
                key = None
            elif key is not None:
                seen.add(key)
            out.append((conf, key))
        rows = out
    return rows


def pr_curve(match_results, duplicates_as_fp=False):
    """Sweep a confidence threshold over every distinct detection confidence."""
    n_gt = sum(mr.n_gt for mr in match_results)
    if n_gt == 0:
        raise ValueError("precision-recall undefined without ground-truth lesions")
    rows = _pooled(match_results, duplicates_as_fp)
    thresholds, points = [], []
    tp = fp = 0
    hit = set()
    i = 0
    while i < len(rows):
        conf = rows[i][0]
        while i < len(rows) and rows[i][0] == conf:
            key = rows[i][1]
            if key is None:
                fp += 1
            else:
                tp += 1
                hit.add(key)
            i += 1
        thresholds.append(conf)
        points.append((tp / (tp + fp), len(hit) / n_gt))
    return PRCurve(thresholds, points, n_gt, tp, fp)


def mean_average_precision(pr):
    """Step integral sum (r_i - r_{i-1}) * p_i, starting from recall 0."""
    area, prev = 0.0, 0.0
    for p, r in pr.points:
        area += (r - prev) * p
        prev = r
    return area


def hanley_mcneil_se(auc, n_pos, n_neg):
    if n_pos < 1 or n_neg < 1:
        raise ValueError(f"need n_pos >= 1 and n_neg >= 1, got {n_pos}, {n_neg}")
    a = auc
    q1 = a / (2.0 - a)
    q2 = 2.0 * a * a / (1.0 + a)
    var = (a * (1 - a) + (n_pos - 1) * (q1 - a * a) + (n_neg - 1) * (q2 - a * a)) / (n_pos * n_neg)
    return math.sqrt(max(var, 0.0))


def hanley_mcneil_ci(auc, n_pos, n_neg, z=Z95):
    """Symmetric normal interval auc +- z*SE, clipped to [0, 1]."""
    se = hanley_mcneil_se(auc, n_pos, n_neg)
    return max(0.0, auc - z * se), min(1.0, auc + z * se)


def max_sensitivity(match_results):
    n_gt = sum(mr.n_gt for mr in match_results)
    if n_gt == 0:
        return 0.0
    return sum(mr.n_detected for mr in match_results) / n_gt


def lesion_diameters(lesions):
    return np.array([equivalent_diameter(l.volume_mm3) for l in lesions], dtype=np.float64)


def size_strata(match_results, gt_by_case, diameter_bins=DEFAULT_DIAMETER_BINS):
    """Per diameter bin: number of GT lesions and how many were detected.

    ``gt_by_case`` maps case id to that case's lesion list.  Bins are
    half-open ``[lo, hi)``.
    """
    edges = list(diameter_bins)
    n_bins = len(edges) - 1
    n_gt = [0] * n_bins
    n_det = [0] * n_bins
    detected = {mr.case_id: mr.gt_detected for mr in match_results}
    for cid, lesions in gt_by_case.items():
        for les in lesions:
            d = equivalent_diameter(les.volume_mm3)
            for b in range(n_bins):
                if edges[b] <= d < edges[b + 1]:
                    n_gt[b] += 1
                    n_det[b] += int(bool(detected.get(cid, {}).get(les.id, False)))
                    break
    return [
        {"lo": edges[b], "hi": edges[b + 1], "n_gt": n_gt[b], "n_detected": n_det[b]}
        for b in range(n_bins)
    ]


def smallest_occupied_rate(strata):
    """Detection rate of the first bin that holds any GT lesion."""
    for s in strata:
        if s["n_gt"]:
            return s["n_detected"] / s["n_gt"]
    return float("nan")


@dataclass
class ExperimentResult:
    map: float
    map_ci95: tuple
    max_sensitivity: float
    tp_dice_mean: float
    entropy: dict
    size_strata: list
    pr: dict = field(default_factory=dict)
    histograms: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "map": self.map,
            "map_ci95": list(self.map_ci95),
            "max_sensitivity": self.max_sensitivity,
            "tp_dice_mean": self.tp_dice_mean,
            "entropy": self.entropy,
            "size_strata": self.size_strata,
            "pr": self.pr,
            "histograms": self.histograms,
            "counts": self.counts,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            map=d["map"], map_ci95=tuple(d["map_ci95"]), max_sensitivity=d["max_sensitivity"],
            tp_dice_mean=d["tp_dice_mean"], entropy=d["entropy"], size_strata=d["size_strata"],
            pr=d.get("pr", {}), histograms=d.get("histograms", {}), counts=d.get("counts", {}),
            config=d.get("config", {}),
        )
