"""Core geometric types and oriented-box operations.

Coordinate convention (fixed across the toolkit): x forward, y left, z up,
all in meters in the sensor frame. Box yaw rotates about +z and is stored
normalized to (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TAU = 2.0 * math.pi

# Class labels treated as vehicles by augmentation and evaluation.
DEFAULT_VEHICLE_CLASSES = frozenset(
    {"Car", "Van", "Truck", "PassengerCar", "LargeVehicle", "Vehicle"}
)


def normalize_yaw(yaw: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    r = math.remainder(float(yaw), TAU)
    if r <= -math.pi:
        r += TAU
    return r


def yaw_matrix(yaw: float) -> np.ndarray:
    """3x3 rotation about +z."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Point:
    """Single LiDAR sample: position in meters plus unitless reflectivity."""

    x: float
    y: float
    z: float
    reflectivity: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z, self.reflectivity)):
            raise ValueError("point coordinates and reflectivity must be finite")
        if not 0.0 <= self.reflectivity <= 1.0:
            raise ValueError(f"reflectivity {self.reflectivity} outside [0, 1]")

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.reflectivity])


@dataclass(eq=False)
class PointCloud:
    """Flat set of (x, y, z, reflectivity) samples.

    Attributes:
        points: (N, 4) float64 array, read-only. May be empty.
        frame_id: opaque identifier of the originating scan.
    """

    points: np.ndarray
    frame_id: str = ""

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.frame_id == other.frame_id and np.array_equal(
            self.points, other.points
        )

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)  # always copies
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"expected (N, 4) points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains NaN/Inf values")
        r = pts[:, 3]
        if len(r) and (r.min() < 0.0 or r.max() > 1.0):
            raise ValueError("reflectivity outside [0, 1]; clamp on ingest")
        pts.setflags(write=False)
        self.points = pts

    @classmethod
    def from_xyz(cls, xyz, reflectivity=None, frame_id: str = "") -> "PointCloud":
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        if reflectivity is None:
            reflectivity = np.zeros(len(xyz))
        pts = np.column_stack([xyz, np.asarray(reflectivity, dtype=np.float64)])
        return cls(pts, frame_id)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def reflectivity(self) -> np.ndarray:
        return self.points[:, 3]

    def point(self, i: int) -> Point:
        x, y, z, r = self.points[i]
        return Point(x, y, z, r)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Box3D:
    """Oriented (yaw-only) 3D bounding box.

    Attributes:
        center: (cx, cy, cz) in meters.
        dims: (length, width, height) in meters, all > 0. Length runs along
            the box's local x axis at yaw 0.
        yaw: rotation about +z, normalized to (-pi, pi] at construction.
    """

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        dims = tuple(float(v) for v in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise ValueError("center and dims must be 3-tuples")
        if not all(math.isfinite(v) for v in center + dims):
            raise ValueError("box parameters must be finite")
        if min(dims) <= 0.0:
            raise ValueError(f"box dims must be positive, got {dims}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def length(self) -> float:
        return self.dims[0]

    @property
    def width(self) -> float:
        return self.dims[1]

    @property
    def height(self) -> float:
        return self.dims[2]

    @property
    def volume(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def bottom_z(self) -> float:
        return self.center[2] - self.dims[2] / 2.0

    @property
    def top_z(self) -> float:
        return self.center[2] + self.dims[2] / 2.0

    def footprint(self) -> np.ndarray:
        """(4, 2) BEV corners, counter-clockwise when viewed from above.

        Order at yaw 0: (+l/2,-w/2), (+l/2,+w/2), (-l/2,+w/2), (-l/2,-w/2).
        """
        hl, hw = self.dims[0] / 2.0, self.dims[1] / 2.0
        local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array(self.center[:2])


def box_corners(box: Box3D) -> np.ndarray:
    """8 corners of an oriented box as an (8, 3) array.

    The first four corners are the bottom face (z = cz - h/2) in
    counter-clockwise order viewed from above; corners 4..7 are the top face
    directly above corners 0..3.
    """
    foot = box.footprint()
    bottom = np.column_stack([foot, np.full(4, box.bottom_z)])
    top = np.column_stack([foot, np.full(4, box.top_z)])
    return np.vstack([bottom, top])


def to_box_frame(points, box: Box3D) -> np.ndarray:
    """Map world-frame xyz point(s) into box-local coordinates.

    Translates by -center, then rotates by -yaw about +z. Accepts a (3,)
    point or an (N, 3) array and preserves the input shape.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    local = (pts.reshape(-1, 3) - np.array(box.center)) @ yaw_matrix(box.yaw)
    return local[0] if single else local


def from_box_frame(points, box: Box3D) -> np.ndarray:
    """Inverse of :func:`to_box_frame` (round-trip error < 1e-9 m)."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    world = pts.reshape(-1, 3) @ yaw_matrix(box.yaw).T + np.array(box.center)
    return world[0] if single else world


def points_in_box(cloud: PointCloud, box: Box3D, dilation_xy: float = 0.0) -> np.ndarray:
    """Indices of cloud points inside or on the boundary of the oriented box.

    The box is closed: boundary points count as inside. ``dilation_xy``
    expands length and width by that margin on each side (used by the noise
    injection protocol), leaving height unchanged.
    """
    if len(cloud) == 0:
        return np.empty(0, dtype=np.intp)
    local = to_box_frame(cloud.xyz, box)
    half = np.array(
        [
            box.dims[0] / 2.0 + dilation_xy,
            box.dims[1] / 2.0 + dilation_xy,
            box.dims[2] / 2.0,
        ]
    )
    inside = np.all(np.abs(local) <= half, axis=1)
    return np.nonzero(inside)[0]


@dataclass(frozen=True)
class GtObject:
    """Ground-truth annotation: box plus KITTI-style label fields."""

    box: Box3D
    label: str
    occlusion: int = 0
    truncation: float = 0.0

    def __post_init__(self):
        if not self.label:
            raise ValueError("ground-truth object requires a class label")


@dataclass(frozen=True)
class Detection:
    """Detector output: box plus confidence score in [0, 1]."""

    box: Box3D
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass
class DetectionFrame:
    """One scan with its annotations and (optionally) detector predictions."""

    cloud: PointCloud
    gt_boxes: list[GtObject] = field(default_factory=list)
    pred_boxes: list[Detection] = field(default_factory=list)
