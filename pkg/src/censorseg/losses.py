"""Voxelwise losses for two-class segmentation under false-negative noise.

Every loss here is a weighted cross entropy over the two class probabilities,

    loss = mean_voxels( -w_lesion * log p_lesion - w_normal * log p_normal )

with constant (non-differentiated) weight maps built from the target ``y``
and, for the bootstrap variants, from the hard prediction ``argmax(p)``.
Writing them this way keeps the argmax target detached by construction.

The four kinds:

* ``ce``                  w_les = y,            w_nrm = 1 - y
* ``class_weighted``      w_les = alpha * y,    w_nrm = 1 - y
* ``bootstrap``           convex mix of CE(y) and CE(argmax p) with weight beta
* ``lopsided_bootstrap``  alpha-weighted CE where y = 1; bootstrap mix where y = 0

Probabilities are clamped to [EPS, 1 - EPS] before the log.  A voxel with
p_lesion exactly 0.5 has argmax 0 (normal).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .gradcore import EPS, ShapeError, Tensor

KINDS = ("ce", "class_weighted", "bootstrap", "lopsided_bootstrap")

# exponentially spaced grid used for the censoring experiments
ALPHA_GRID = (3.0, 10.0, 30.0)
BETA_GRID = (1.0, 0.5, 0.1)


@dataclass(frozen=True)
class LossSpec:
    kind: str = "ce"
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if not self.alpha >= 1.0:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")

    @property
    def label(self):
        return f"{self.kind}_a{self.alpha:g}_b{self.beta:g}"

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], alpha=float(d.get("alpha", 1.0)), beta=float(d.get("beta", 0.0)))


def _check(probs, target):
    if probs.data.ndim != 4 or probs.shape[1] != 2:
        raise ShapeError(f"probs must be (N,2,H,W), got {probs.shape}")
    y = np.asarray(target)
    expected = (probs.shape[0],) + probs.shape[2:]
    if y.shape != expected:
        raise ShapeError(f"target shape {y.shape} does not match probs spatial shape {expected}")
    return y.astype(probs.dtype)


def hard_prediction(probs):
    """argmax over the class axis as a float {0,1} map; ties go to class 0."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return (p[:, 1] > p[:, 0]).astype(p.dtype)


def weighted_ce(probs, w_lesion, w_normal):
    """mean( -w_lesion log p1 - w_normal log p0 ), weights held constant."""
    p = probs.clamp(EPS, 1.0 - EPS).log()
    dt = probs.dtype
    per_voxel = p[:, 1] * np.asarray(w_lesion, dtype=dt) + p[:, 0] * np.asarray(w_normal, dtype=dt)
    return -per_voxel.mean()


def loss_weights(spec, probs, target):
    """Per-voxel (w_lesion, w_normal) maps for ``spec``."""
    y = _check(probs, target)
    a, b = spec.alpha, spec.beta
    if spec.kind == "ce":
        return y, 1.0 - y
    if spec.kind == "class_weighted":
        return a * y, 1.0 - y
    hard = hard_prediction(probs)
    if spec.kind == "bootstrap":
        return (1 - b) * y + b * hard, (1 - b) * (1 - y) + b * (1 - hard)
    # lopsided: alpha-weighted on positives, bootstrap mixture on negatives
    neg = 1.0 - y
    return a * y + neg * b * hard, neg * ((1 - b) + b * (1 - hard))


def ce_loss(probs, target):
    """Plain CE.  One voxel, p_lesion = 0.8, y = 1: -ln 0.8 = 0.22314."""
    return compute_loss(LossSpec("ce"), probs, target)


def class_weighted_loss(probs, target, alpha):
    """Lesion voxels weighted by alpha.  p_lesion = 0.8, y = 1, alpha = 3: 0.66943."""
    return compute_loss(LossSpec("class_weighted", alpha=alpha), probs, target)


def bootstrap_loss(probs, target, beta):
    """p_lesion = 0.8, y = 0, beta = 0.5: 0.5 * -ln 0.2 + 0.5 * -ln 0.8 = 0.91629."""
    return compute_loss(LossSpec("bootstrap", beta=beta), probs, target)


def lopsided_bootstrap_loss(probs, target, alpha, beta):
    """Class weighting on y = 1, bootstrap mix on y = 0.

    p_lesion = 0.8, y = 1, alpha = 3, any beta: 0.66943.
    p_lesion = 0.9, y = 0, beta = 0.1: 0.9 * -ln 0.1 + 0.1 * -ln 0.9 = 2.082863.
    """
    return compute_loss(LossSpec("lopsided_bootstrap", alpha=alpha, beta=beta), probs, target)


def compute_loss(spec, probs, target):
    w1, w0 = loss_weights(spec, probs, target)
    return weighted_ce(probs, w1, w0)


def prob_histogram(probs, bins=100):
    """Counts of lesion probabilities in ``bins`` equal-width bins on [0, 1]."""
    counts, _ = np.histogram(np.asarray(probs, dtype=np.float64).ravel(), bins=bins, range=(0.0, 1.0))
    return counts


def histogram_entropy(counts):
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    q = counts[counts > 0] / total
    return float(-(q * np.log(q)).sum())


def lesion_prob_entropy(probs, bins=100):
    """Shannon entropy (nats) of the renormalised probability histogram."""
    return histogram_entropy(prob_histogram(probs, bins))
