"""Copy-paste insertion of gas clouds into detection frames.

For each vehicle ground-truth box, a gas cloud from the pool may be attached
behind the vehicle (where exhaust pipes sit) or above it (driving through a
cloud emitted elsewhere). Whole frames are augmented with a probability that
ramps up over training epochs. Inserted points are appended as-is; imposing
the physical sensor grid afterwards is the resampler's job.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyPool
from .generation import GasCloud, GasCloudPool
from .geometry import (
    DEFAULT_VEHICLE_CLASSES,
    Box3D,
    DetectionFrame,
    PointCloud,
    yaw_matrix,
)
from .seeding import SeededRng


def schedule_p_aug(epoch: int, total_epochs: int) -> float:
    """Frame-augmentation probability at a given epoch: min(epoch / T, 1).

    Starts at 0 and grows by 1/T after each epoch, so noise is introduced
    gradually during training.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    return min(epoch / total_epochs, 1.0)


class PlacementKind(enum.Enum):
    BACK_CENTER = "back_center"
    BACK_LEFT = "back_left"
    BACK_RIGHT = "back_right"
    TOP = "top"


# rear anchor lateral offsets in vehicle-frame half-widths, indexed by draw
_REAR_KINDS = (PlacementKind.BACK_CENTER, PlacementKind.BACK_LEFT, PlacementKind.BACK_RIGHT)
_REAR_LATERAL = (0.0, 0.5, -0.5)


@dataclass(frozen=True)
class Placement:
    """Anchor recipe for one insertion.

    (x, y) is the world position that receives the gas cloud's tight-box
    center; z_face is the vehicle plane (bottom for rear anchors, top for
    TOP) that the cloud's tight box will rest on once its half-height is
    known at insertion time. yaw is the cloud's world yaw (= vehicle yaw).
    """

    kind: PlacementKind
    x: float
    y: float
    z_face: float
    yaw: float


@dataclass(frozen=True)
class AugmentParams:
    """Placement probabilities and schedule state.

    p_aug may be pinned explicitly; when left None it is schedule-managed
    as min(epoch / total_epochs, 1).
    """

    p_gas: float = 0.5
    p_top: float = 0.1
    p_aug: float | None = None
    epoch: int = 0
    total_epochs: int = 1
    standoff: float = 0.3          # m behind the rear face
    jitter: float = 0.2            # m, uniform +- in vehicle-frame x and y
    vehicle_classes: frozenset[str] = DEFAULT_VEHICLE_CLASSES

    def __post_init__(self):
        for name in ("p_gas", "p_top"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.p_aug is not None and not 0.0 <= self.p_aug <= 1.0:
            raise ValueError(f"p_aug must be in [0, 1], got {self.p_aug}")
        if self.epoch < 0 or self.total_epochs < 1:
            raise ValueError("epoch must be >= 0 and total_epochs >= 1")

    @property
    def effective_p_aug(self) -> float:
        if self.p_aug is not None:
            return self.p_aug
        return schedule_p_aug(self.epoch, self.total_epochs)


@dataclass
class AugmentedFrame:
    """Frame with inserted gas points plus the gas box set.

    gas_point_indices indexes the inserted points in frame.cloud;
    box_point_ranges gives each gas box's [start, stop) slice of the cloud.
    """

    frame: DetectionFrame
    gas_boxes: list[Box3D] = field(default_factory=list)
    gas_point_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))
    box_point_ranges: list[tuple[int, int]] = field(default_factory=list)


def choose_placement(
    vehicle: Box3D, rng: SeededRng, params: AugmentParams
) -> Placement | None:
    """Decide whether and where to attach a gas cloud to one vehicle.

    Branch order is fixed: first the TOP branch fires with probability
    p_top; otherwise a rear anchor is drawn with probability p_gas (uniform
    among back-center / back-left / back-right, with the configured standoff
    and +-jitter in vehicle-frame x, y); otherwise no placement. Draw order:
    u_top, then u_gas, anchor index, jitter x, jitter y as needed.
    """
    cx, cy, _ = vehicle.center
    if rng.random() < params.p_top:
        return Placement(PlacementKind.TOP, cx, cy, vehicle.top_z, vehicle.yaw)
    if rng.random() < params.p_gas:
        idx = rng.randint(0, 2)
        jx = params.jitter * (2.0 * rng.random() - 1.0)
        jy = params.jitter * (2.0 * rng.random() - 1.0)
        local_x = -vehicle.length / 2.0 - params.standoff + jx
        local_y = _REAR_LATERAL[idx] * vehicle.width + jy
        c, s = math.cos(vehicle.yaw), math.sin(vehicle.yaw)
        return Placement(
            _REAR_KINDS[idx],
            cx + c * local_x - s * local_y,
            cy + s * local_x + c * local_y,
            vehicle.bottom_z,
            vehicle.yaw,
        )
    return None


def _transform_cloud(gas: GasCloud, placement: Placement) -> tuple[np.ndarray, Box3D]:
    """Rigidly move a canonical gas cloud to its placement pose."""
    anchor = np.array(
        [placement.x, placement.y, placement.z_face + gas.tight_box.height / 2.0]
    )
    rot = yaw_matrix(placement.yaw)
    moved = (gas.cloud.xyz - np.array(gas.tight_box.center)) @ rot.T + anchor
    pts = np.column_stack([moved, gas.cloud.reflectivity])
    box = Box3D(tuple(anchor), gas.tight_box.dims, placement.yaw)
    return pts, box


def insert_cloud(
    frame: DetectionFrame, gas: GasCloud, placement: Placement
) -> AugmentedFrame:
    """Append one posed gas cloud to a frame.

    The cloud's tight-box center lands on the placement anchor; the same
    rigid transform maps the tight box into the frame, so the returned gas
    box contains every inserted point.
    """
    pts, box = _transform_cloud(gas, placement)
    start = len(frame.cloud)
    merged = PointCloud(
        np.vstack([frame.cloud.points, pts]), frame.cloud.frame_id
    )
    new_frame = DetectionFrame(merged, list(frame.gt_boxes), list(frame.pred_boxes))
    stop = start + len(pts)
    return AugmentedFrame(
        new_frame, [box], np.arange(start, stop, dtype=np.intp), [(start, stop)]
    )


def augment_frame(
    frame: DetectionFrame,
    pool: GasCloudPool,
    params: AugmentParams,
    rng: SeededRng,
) -> AugmentedFrame:
    """Attach gas clouds to a frame's vehicles per the placement policy.

    With probability 1 - p_aug the frame is returned unchanged (empty gas
    box set). Otherwise each vehicle ground-truth box independently gets a
    placement decision; each accepted placement draws one cloud uniformly
    from the pool. Ground truth and predictions are never modified. The
    output is not sensor-resampled; run the resampler as a separate stage.
    """
    if not pool.generated:
        raise EmptyPool("augmentation requires a pool with generated clouds")
    if rng.random() >= params.effective_p_aug:
        return AugmentedFrame(frame)

    insertions: list[tuple[GasCloud, Placement]] = []
    for gt in frame.gt_boxes:
        if gt.label not in params.vehicle_classes:
            continue
        placement = choose_placement(gt.box, rng, params)
        if placement is not None:
            insertions.append((pool.draw(rng), placement))

    if not insertions:
        return AugmentedFrame(
            DetectionFrame(frame.cloud, list(frame.gt_boxes), list(frame.pred_boxes))
        )

    chunks = [frame.cloud.points]
    gas_boxes: list[Box3D] = []
    ranges: list[tuple[int, int]] = []
    cursor = len(frame.cloud)
    for gas, placement in insertions:
        pts, box = _transform_cloud(gas, placement)
        chunks.append(pts)
        gas_boxes.append(box)
        ranges.append((cursor, cursor + len(pts)))
        cursor += len(pts)

    merged = PointCloud(np.vstack(chunks), frame.cloud.frame_id)
    new_frame = DetectionFrame(merged, list(frame.gt_boxes), list(frame.pred_boxes))
    indices = np.arange(len(frame.cloud), cursor, dtype=np.intp)
    return AugmentedFrame(new_frame, gas_boxes, indices, ranges)
