"""Slow, independent reference implementations used by the test suite."""

from fractions import Fraction
from itertools import product

import numpy as np


def neighbour_offsets(connectivity):
    offs = []
    for d in product((-1, 0, 1), repeat=3):
        n = sum(abs(v) for v in d)
        if n == 0:
            continue
        if connectivity == 6 and n > 1:
            continue
        if connectivity == 18 and n > 2:
            continue
        offs.append(d)
    return offs


def neighbour_table(shape, connectivity):
    """Linear-index neighbour lists for every voxel of ``shape``."""
    nz, ny, nx = shape
    offs = neighbour_offsets(connectivity)
    table = []
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                nb = []
                for dz, dy, dx in offs:
                    zz, yy, xx = z + dz, y + dy, x + dx
                    if 0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx:
                        nb.append((zz * ny + yy) * nx + xx)
                table.append(nb)
    return table


def flood_fill_components(mask, table):
    """Stack-based flood fill; components as sorted linear-index lists."""
    flat = [bool(v) for v in np.asarray(mask).ravel()]
    label = [0] * len(flat)
    comps = []
    for start in range(len(flat)):
        if not flat[start] or label[start]:
            continue
        label[start] = len(comps) + 1
        stack, comp = [start], []
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in table[v]:
                if flat[u] and not label[u]:
                    label[u] = label[start]
                    stack.append(u)
        comps.append(sorted(comp))
    return comps


def brute_force_ap(dets, n_gt):
    """AP by recomputing precision/recall from scratch at every threshold.

    ``dets`` is a list of (confidence, lesion key or None).  Exact rational
    arithmetic.
    """
    levels = sorted({c for c, _ in dets}, reverse=True)
    area = Fraction(0)
    prev_r = Fraction(0)
    for t in levels:
        kept = [k for c, k in dets if c >= t]
        tp = sum(k is not None for k in kept)
        r = Fraction(len({k for k in kept if k is not None}), n_gt)
        p = Fraction(tp, len(kept))
        area += (r - prev_r) * p
        prev_r = r
    return area
