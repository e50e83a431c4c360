"""Spherical resampling onto a physical LiDAR scan grid.

Appending synthetic points violates the sensor's physical structure (one
return per laser per azimuth step). Each point is mapped to spherical
coordinates r = sqrt(x^2+y^2+z^2), phi = atan2(sqrt(x^2+y^2), z),
theta = atan2(y, x), binned into the (layer, azimuth) lattice of a sensor
model, and within each occupied cell only the nearest return survives.
Surviving points keep their original Cartesian coordinates; the grid only
selects, it never moves points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OriginPoint
from .geometry import Point, PointCloud, TAU

ORIGIN_EPS = 1e-9  # m; points closer than this to the sensor are unmeasurable


@dataclass(frozen=True)
class SensorSpec:
    """Physical model of a rotating LiDAR.

    Attributes:
        layer_elevations: strictly increasing polar angles phi_i in radians,
            measured from the +z axis (phi = 0 straight up, pi/2 horizon).
        azimuth_bin_width: horizontal angular resolution in radians,
            derived from the turn rate.
        max_range: returns beyond this distance are dropped.
    """

    layer_elevations: tuple[float, ...]
    azimuth_bin_width: float
    max_range: float = math.inf

    def __post_init__(self):
        elev = tuple(float(v) for v in self.layer_elevations)
        if len(elev) == 0:
            raise ValueError("sensor needs at least one layer")
        if any(b <= a for a, b in zip(elev, elev[1:])):
            raise ValueError("layer elevations must be strictly increasing")
        if not 0.0 < self.azimuth_bin_width <= TAU:
            raise ValueError("azimuth_bin_width must be in (0, 2*pi]")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")
        object.__setattr__(self, "layer_elevations", elev)

    @property
    def num_layers(self) -> int:
        return len(self.layer_elevations)

    @property
    def bins_per_revolution(self) -> int:
        return max(1, round(TAU / self.azimuth_bin_width))

    @classmethod
    def from_fov(
        cls,
        num_layers: int,
        fov_up_deg: float,
        fov_down_deg: float,
        azimuth_step_deg: float,
        max_range: float = math.inf,
    ) -> "SensorSpec":
        """Evenly spaced layers between two elevation angles above/below horizon."""
        phi_top = math.radians(90.0 - fov_up_deg)
        phi_bottom = math.radians(90.0 - fov_down_deg)
        elev = np.linspace(phi_top, phi_bottom, num_layers)
        return cls(tuple(elev), math.radians(azimuth_step_deg), max_range)


def sensor_preset(name: str) -> SensorSpec:
    """Shipped sensor models.

    "velodyne64": 64 layers, +2..-24.9 deg, Velodyne-64-like (DENSE-style
    target sensor). "pandar40": 40 layers, +15..-25 deg, a generic 40-layer
    rotating LiDAR like the one behind the labeled exhaust pool.
    """
    if name == "velodyne64":
        return SensorSpec.from_fov(64, 2.0, -24.9, 0.2, 120.0)
    if name == "pandar40":
        return SensorSpec.from_fov(40, 15.0, -25.0, 0.2, 200.0)
    raise KeyError(f"unknown sensor preset '{name}'")


@dataclass(frozen=True)
class SphericalPoint:
    """Range / polar / azimuth representation of one sample."""

    r: float
    phi: float     # [0, pi], from +z
    theta: float   # (-pi, pi]
    reflectivity: float = 0.0


def cartesian_to_spherical(p: Point) -> SphericalPoint:
    """r = sqrt(x^2+y^2+z^2), phi = atan2(sqrt(x^2+y^2), z), theta = atan2(y, x)."""
    r = math.sqrt(p.x * p.x + p.y * p.y + p.z * p.z)
    if r <= ORIGIN_EPS:
        raise OriginPoint("point at the sensor origin has no direction")
    phi = math.atan2(math.hypot(p.x, p.y), p.z)
    theta = math.atan2(p.y, p.x)
    return SphericalPoint(r, phi, theta, p.reflectivity)


def spherical_to_cartesian(sp: SphericalPoint) -> Point:
    """Inverse of :func:`cartesian_to_spherical` (round-trip error < 1e-9 relative)."""
    sin_phi = math.sin(sp.phi)
    return Point(
        sp.r * sin_phi * math.cos(sp.theta),
        sp.r * sin_phi * math.sin(sp.theta),
        sp.r * math.cos(sp.phi),
        sp.reflectivity,
    )


def assign_cells(cloud: PointCloud, spec: SensorSpec):
    """Vectorized cell assignment.

    Returns (valid mask, layer index, azimuth bin, range). A point is valid
    when it is off the origin, within max_range, and within half the local
    inter-layer gap of its nearest layer (the vertical field of view).
    Azimuth bins wrap modulo bins_per_revolution; nearest-layer ties go to
    the lower layer index.
    """
    xyz = cloud.xyz
    r = np.linalg.norm(xyz, axis=1)
    valid = (r > ORIGIN_EPS) & (r <= spec.max_range)

    phi = np.arctan2(np.hypot(xyz[:, 0], xyz[:, 1]), xyz[:, 2])
    theta = np.arctan2(xyz[:, 1], xyz[:, 0])

    elev = np.asarray(spec.layer_elevations)
    pos = np.searchsorted(elev, phi)
    lo = np.clip(pos - 1, 0, len(elev) - 1)
    hi = np.clip(pos, 0, len(elev) - 1)
    d_lo = np.abs(phi - elev[lo])
    d_hi = np.abs(phi - elev[hi])
    layer = np.where(d_lo <= d_hi, lo, hi)
    dist = np.minimum(d_lo, d_hi)

    if len(elev) > 1:
        gap_below = np.empty(len(elev))
        gap_below[1:] = np.diff(elev)
        gap_below[0] = gap_below[1]
        gap_above = np.empty(len(elev))
        gap_above[:-1] = np.diff(elev)
        gap_above[-1] = gap_above[-2]
        threshold = np.where(phi < elev[layer], gap_below[layer], gap_above[layer]) / 2.0
        valid &= dist <= threshold
    # single-layer sensors accept any polar angle

    azbin = np.floor((theta + np.pi) / spec.azimuth_bin_width).astype(np.int64)
    azbin %= spec.bins_per_revolution
    return valid, layer.astype(np.int64), azbin, r


def resample_to_sensor(
    cloud: PointCloud, spec: SensorSpec, inserted_indices=None
) -> PointCloud:
    """Keep at most one return per (layer, azimuth) cell, nearest range wins.

    Range ties go to the earliest point in the input order. The output is a
    subset of the input points in their original order, so the operation is
    idempotent and caps the point count at layers x bins_per_revolution.

    ``inserted_indices`` switches on the alternative collision rule (off by
    default): points with those indices (e.g. pasted gas points) lose to any
    other point sharing their cell, regardless of range, instead of
    competing on range alone.
    """
    if len(cloud) == 0:
        return cloud
    valid, layer, azbin, r = assign_cells(cloud, spec)
    idx = np.nonzero(valid)[0]
    if len(idx) == 0:
        return PointCloud(np.empty((0, 4)), cloud.frame_id)
    cell = layer[idx] * spec.bins_per_revolution + azbin[idx]
    if inserted_indices is not None:
        demoted = np.zeros(len(cloud), dtype=bool)
        demoted[np.asarray(inserted_indices, dtype=np.intp)] = True
        order = np.lexsort((idx, r[idx], demoted[idx], cell))
    else:
        order = np.lexsort((idx, r[idx], cell))
    cell_sorted = cell[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = cell_sorted[1:] != cell_sorted[:-1]
    survivors = np.sort(idx[order[first]])
    return PointCloud(cloud.points[survivors], cloud.frame_id)
