"""Oriented-bounding-box collision and clearance tests for two-vehicle scenes."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class EmptyTraceError(Exception):
    pass


@dataclass(frozen=True)
class FootprintOBB:
    """Axis-box footprint of a vehicle, rotated by its heading."""

    cx: float
    cy: float
    half_length: float
    half_width: float
    heading: float

    def __post_init__(self):
        if self.half_length <= 0 or self.half_width <= 0:
            raise ValueError("OBB half extents must be positive")

    def axes(self) -> np.ndarray:
        """Unit length/width axes, shape (2, 2)."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([[c, s], [-s, c]])

    def corners(self) -> np.ndarray:
        """Corner points in CCW order, shape (4, 2)."""
        u, v = self.axes()
        hl, hw = self.half_length, self.half_width
        center = np.array([self.cx, self.cy])
        return np.array(
            [
                center + hl * u + hw * v,
                center - hl * u + hw * v,
                center - hl * u - hw * v,
                center + hl * u - hw * v,
            ]
        )

    def bounding_radius(self) -> float:
        return math.hypot(self.half_length, self.half_width)


def obb_intersect(a: FootprintOBB, b: FootprintOBB) -> bool:
    """Exact separating-axis test over the four box axes."""
    corners_a = a.corners()
    corners_b = b.corners()
    for axis in np.vstack([a.axes(), b.axes()]):
        pa = corners_a @ axis
        pb = corners_b @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def _point_segment_distances(points: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> float:
    """Min distance from each of `points` to segments (seg_a[i], seg_b[i])."""
    d = seg_b - seg_a  # (m, 2)
    len_sq = np.einsum("ij,ij->i", d, d)
    rel = points[:, None, :] - seg_a[None, :, :]  # (n, m, 2)
    t = np.clip(np.einsum("nmj,mj->nm", rel, d) / len_sq, 0.0, 1.0)
    nearest = seg_a[None, :, :] + t[:, :, None] * d[None, :, :]
    return float(np.sqrt(((points[:, None, :] - nearest) ** 2).sum(axis=2).min()))


def min_clearance(a: FootprintOBB, b: FootprintOBB) -> float:
    """Minimum gap between the two footprints; 0 when they intersect."""
    if obb_intersect(a, b):
        return 0.0
    ca, cb = a.corners(), b.corners()
    edges_a0, edges_a1 = ca, np.roll(ca, -1, axis=0)
    edges_b0, edges_b1 = cb, np.roll(cb, -1, axis=0)
    return min(
        _point_segment_distances(ca, edges_b0, edges_b1),
        _point_segment_distances(cb, edges_a0, edges_a1),
    )


def clearance_lower_bound(a: FootprintOBB, b: FootprintOBB) -> float:
    """Cheap bound: center distance minus both bounding radii."""
    return (
        math.hypot(a.cx - b.cx, a.cy - b.cy) - a.bounding_radius() - b.bounding_radius()
    )


class OutcomeKind(enum.Enum):
    COLLISION = "collision"
    NEAR_MISS = "near_miss"
    PASS = "pass"


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    min_clearance_m: float


def classify_outcome(clearance_trace: Sequence[float], near_miss_threshold: float) -> Outcome:
    """Collision if contact ever occurred, near-miss below the threshold, else pass."""
    if len(clearance_trace) == 0:
        raise EmptyTraceError("clearance trace is empty")
    lowest = min(clearance_trace)
    if lowest < 0:
        raise ValueError("clearance values must be >= 0")
    if lowest == 0.0:
        return Outcome(OutcomeKind.COLLISION, 0.0)
    if lowest < near_miss_threshold:
        return Outcome(OutcomeKind.NEAR_MISS, lowest)
    return Outcome(OutcomeKind.PASS, lowest)
