"""False-negative injection: delete whole lesions from training annotations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .phantom import rasterize_mask

MODES = ("none", "stochastic", "size_based")
TIE_BREAK = "volume asc, then (case_id, lesion_id) lexicographic"


@dataclass
class CensorPlan:
    mode: str = "none"
    p: float = 0.0
    seed: int | None = None
    removed: list = field(default_factory=list)  # sorted (case_id, lesion_id) pairs
    n_total: int = 0

    @property
    def achieved_rate(self):
        return len(self.removed) / self.n_total if self.n_total else 0.0

    def removed_set(self):
        return {tuple(r) for r in self.removed}

    def to_dict(self):
        d = {
            "mode": self.mode,
            "p": self.p,
            "seed": self.seed,
            "n_total": self.n_total,
            "n_removed": len(self.removed),
            "achieved_rate": self.achieved_rate,
            "removed": [list(r) for r in self.removed],
        }
        if self.mode == "size_based":
            d["tie_break"] = TIE_BREAK
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(mode=d["mode"], p=float(d["p"]), seed=d.get("seed"),
                   removed=[tuple(r) for r in d["removed"]], n_total=int(d["n_total"]))


def _check_rate(p):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"censoring rate must lie in [0, 1], got {p}")


def _pool(cases):
    return [(c.id, les) for c in cases for les in c.lesions]


def lesion_uniform(seed, case_id, lesion_id):
    """U(0,1) draw from a stream keyed only by (seed, case, lesion)."""
    return np.random.default_rng([int(seed), int(case_id), int(lesion_id)]).random()


def censor_stochastic(cases, p, seed):
    """Remove each lesion independently with probability ``p``."""
    _check_rate(p)
    pool = _pool(cases)
    removed = sorted((cid, les.id) for cid, les in pool if lesion_uniform(seed, cid, les.id) < p)
    return CensorPlan("stochastic", float(p), int(seed), removed, len(pool))


def censor_size_based(cases, p):
    """Remove the floor(p * n) smallest lesions by volume across all cases."""
    _check_rate(p)
    pool = _pool(cases)
    ranked = sorted(pool, key=lambda item: (item[1].volume_mm3, item[0], item[1].id))
    k = math.floor(p * len(pool) + 1e-9)
    removed = sorted((cid, les.id) for cid, les in ranked[:k])
    return CensorPlan("size_based", float(p), None, removed, len(pool))


def no_censoring(cases):
    return CensorPlan("none", 0.0, None, [], len(_pool(cases)))


def make_plan(cases, mode, p=0.5, seed=0):
    if mode == "none":
        return no_censoring(cases)
    if mode == "stochastic":
        return censor_stochastic(cases, p, seed)
    if mode == "size_based":
        return censor_size_based(cases, p)
    raise ValueError(f"unknown censor mode {mode!r}; expected one of {MODES}")


def retained_lesions(case, plan):
    gone = plan.removed_set()
    return [les for les in case.lesions if (case.id, les.id) not in gone]


def apply_plan(cases, plan):
    """Censored annotation masks, keyed by case id.  Volumes are untouched."""
    return {c.id: rasterize_mask(retained_lesions(c, plan), c.shape_zyx) for c in cases}
