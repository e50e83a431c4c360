"""Oriented 3D IoU kernel and the noise-robustness loss.

The loss penalizes detector predictions that overlap inserted gas boxes:
per prediction, the maximum IoU against any gas box, averaged over
predictions. It is combined with a detector's own loss as
total = l_train + beta * l_noise. Values only; gradient propagation belongs
to the host training framework, which validates its differentiable
re-implementation against this kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box3D

DEFAULT_BETA = 0.1      # best-performing loss weight
CLIP_EPS = 1e-12        # inclusive half-plane tolerance for polygon clipping


@dataclass
class IoUMatrix:
    """Pairwise IoU grid: rows follow prediction order, columns gas-box order."""

    values: np.ndarray  # (|P|, |B|) float64 in [0, 1]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("IoU values must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class LossBreakdown:
    """Total training loss and its components: total = l_train + beta * l_noise."""

    l_train: float
    l_noise: float
    beta: float
    total: float


def _clip_by_edge(poly: list, p, q) -> list:
    """Sutherland-Hodgman step: keep the part of poly left of edge p->q (inclusive)."""
    ex, ey = q[0] - p[0], q[1] - p[1]
    vals = [ex * (pt[1] - p[1]) - ey * (pt[0] - p[0]) for pt in poly]
    out = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        cur_in = vals[i] >= -CLIP_EPS
        nxt_in = vals[j] >= -CLIP_EPS
        if cur_in:
            out.append(poly[i])
        if cur_in != nxt_in:
            t = vals[i] / (vals[i] - vals[j])
            cx = poly[i][0] + t * (poly[j][0] - poly[i][0])
            cy = poly[i][1] + t * (poly[j][1] - poly[i][1])
            out.append((cx, cy))
    return out


def _shoelace(poly: list) -> float:
    if len(poly) < 3:
        return 0.0
    s = 0.0
    for i in range(len(poly)):
        j = (i + 1) % len(poly)
        s += poly[i][0] * poly[j][1] - poly[j][0] * poly[i][1]
    return abs(s) / 2.0


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    """Intersection area of two yaw-rotated rectangular footprints.

    a's footprint is clipped against b's four half-planes; the clipped
    convex polygon's area comes from the shoelace formula. Edge-touching
    footprints contribute zero area.
    """
    poly = [tuple(v) for v in a.footprint()]
    edges = [tuple(v) for v in b.footprint()]
    for i in range(4):
        poly = _clip_by_edge(poly, edges[i], edges[(i + 1) % 4])
        if len(poly) < 3:
            return 0.0
    return _shoelace(poly)


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Footprint-area IoU, ignoring height (the BEV detection metric)."""
    inter = bev_intersection_area(a, b)
    area_a = a.length * a.width
    area_b = b.length * b.width
    union = area_a + area_b - inter
    return min(max(inter / union, 0.0), 1.0)


def iou3d(a: Box3D, b: Box3D) -> float:
    """Oriented 3D IoU: BEV intersection times vertical overlap, over union."""
    dz = min(a.top_z, b.top_z) - max(a.bottom_z, b.bottom_z)
    if dz <= 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * dz
    union = a.volume + b.volume - inter
    return min(max(inter / union, 0.0), 1.0)


def iou_matrix(preds: list[Box3D], gas: list[Box3D]) -> IoUMatrix:
    """Pairwise iou3d between predictions and gas boxes; empty lists give a
    0-dimension matrix."""
    values = np.zeros((len(preds), len(gas)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gas):
            values[i, j] = iou3d(p, g)
    return IoUMatrix(values)


def noise_loss(preds: list[Box3D], gas: list[Box3D]) -> float:
    """Mean over predictions of the max IoU against any gas box, in [0, 1].

    Empty predictions or an empty gas box set give 0 (nothing to penalize).
    """
    if not preds or not gas:
        return 0.0
    values = iou_matrix(preds, gas).values
    return float(values.max(axis=1).mean())


def total_loss(l_train: float, l_noise: float, beta: float = DEFAULT_BETA) -> LossBreakdown:
    """Combine the detector loss with the weighted noise loss."""
    if l_train < 0.0:
        raise ValueError("l_train must be >= 0")
    if not 0.0 <= l_noise <= 1.0:
        raise ValueError("l_noise must be in [0, 1]")
    if beta < 0.0:
        raise ValueError("beta must be >= 0")
    return LossBreakdown(l_train, l_noise, beta, l_train + beta * l_noise)
