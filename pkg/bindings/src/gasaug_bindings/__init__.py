"""In-process flat-array bindings for detector training loops.

Exposes the toolkit's per-batch operations over contiguous numeric buffers
so a training loop can call them without building object graphs:

  * clouds are (n, 4) float32 arrays: x, y, z, reflectivity;
  * boxes are (m, 7) float32 arrays: cx, cy, cz, length, width, height, yaw.

All functions leave their input buffers untouched (bit-identical after any
call). A pool directory is opened once into an immutable handle and reused
across batches. Pass the stream seed produced by
``gasaug.derive_seed(master_seed, frame_id, "augment")`` to reproduce the
batch CLI pipeline exactly.

Loss values here are plain floats: the kernel is the correctness reference
for a framework-native differentiable re-implementation, not an autodiff
node itself.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from gasaug import (
    AugmentParams,
    Box3D,
    DetectionFrame,
    GtObject,
    PointCloud,
    SeededRng,
    SensorSpec,
    augment_frame,
    resample_to_sensor,
    sensor_preset,
)
from gasaug import iou_matrix as _core_iou_matrix
from gasaug import noise_loss as _core_noise_loss
from gasaug.io import load_pool, read_sensor_spec

__version__ = "0.1.0"

__all__ = ["PoolHandle", "open_pool", "augment", "resample", "iou_matrix", "noise_loss"]


class PoolHandle:
    """Immutable snapshot of a gas-cloud pool directory.

    Open once, reuse across batches and threads; the handle never touches
    the disk again after construction.
    """

    def __init__(self, pool):
        if not pool.generated:
            raise ValueError("pool directory holds no generated clouds")
        self._pool = pool
        self._path: str = ""

    def __len__(self) -> int:
        return len(self._pool.generated)

    def __repr__(self) -> str:
        return f"PoolHandle({self._path!r}, {len(self)} clouds)"


def open_pool(path) -> PoolHandle:
    """Load a pool directory (written by `gasaug generate`) into a handle."""
    handle = PoolHandle(load_pool(path))
    handle._path = str(path)
    return handle


def _as_cloud(buffer) -> np.ndarray:
    arr = np.ascontiguousarray(buffer, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"cloud buffer must be (n, 4), got {arr.shape}")
    if arr.size and not np.isfinite(arr).all():
        raise ValueError("cloud buffer contains non-finite values")
    return arr


def _as_boxes(buffer) -> list[Box3D]:
    arr = np.ascontiguousarray(buffer, dtype=np.float32)
    if arr.size == 0:
        arr = arr.reshape(0, 7)
    if arr.ndim != 2 or arr.shape[1] != 7:
        raise ValueError(f"box buffer must be (m, 7), got {arr.shape}")
    boxes = []
    for cx, cy, cz, l, w, h, yaw in arr.astype(np.float64):
        boxes.append(Box3D((cx, cy, cz), (l, w, h), yaw))
    return boxes


def _boxes_to_buffer(boxes) -> np.ndarray:
    out = np.empty((len(boxes), 7), dtype=np.float32)
    for i, b in enumerate(boxes):
        out[i, :3] = b.center
        out[i, 3:6] = b.dims
        out[i, 6] = b.yaw
    return out


def _resolve_sensor(sensor) -> SensorSpec:
    if isinstance(sensor, SensorSpec):
        return sensor
    path = Path(str(sensor))
    if path.exists():
        return read_sensor_spec(path)
    return sensor_preset(str(sensor))


def augment(
    cloud,
    vehicle_boxes,
    pool: PoolHandle,
    *,
    seed: int,
    p_aug: float,
    p_gas: float = 0.5,
    p_top: float = 0.1,
    sensor=None,
    standoff: float = 0.3,
    jitter: float = 0.2,
):
    """Attach pool gas clouds behind/above the given vehicles, then resample.

    Returns (cloud', gas_boxes) as float32 buffers. The cloud is quantized
    to float32 before resampling, mirroring the CLI pipeline's file
    boundary, so the result is numerically identical to running
    `gasaug augment` + `gasaug resample` with the same derived seed.
    With ``sensor=None`` the resampling stage is skipped. ``p_aug = 0``
    returns the input cloud values unchanged.
    """
    if not isinstance(pool, PoolHandle):
        raise TypeError("pool must be a PoolHandle from open_pool()")
    arr = _as_cloud(cloud)
    gts = [GtObject(b, "Vehicle") for b in _as_boxes(vehicle_boxes)]
    params = AugmentParams(
        p_gas=p_gas, p_top=p_top, p_aug=p_aug, standoff=standoff, jitter=jitter
    )
    frame = DetectionFrame(PointCloud(arr.astype(np.float64)), gts)
    result = augment_frame(frame, pool._pool, params, SeededRng(seed))
    out = result.frame.cloud.points.astype(np.float32)
    if sensor is not None:
        quantized = PointCloud(out.astype(np.float64))
        out = resample_to_sensor(quantized, _resolve_sensor(sensor)).points.astype(
            np.float32
        )
    return out, _boxes_to_buffer(result.gas_boxes)


def resample(cloud, sensor) -> np.ndarray:
    """Sensor-grid resampling over a flat cloud buffer."""
    arr = _as_cloud(cloud)
    kept = resample_to_sensor(PointCloud(arr.astype(np.float64)), _resolve_sensor(sensor))
    return kept.points.astype(np.float32)


def iou_matrix(preds, gas) -> np.ndarray:
    """Pairwise oriented 3D IoU, (|preds|, |gas|) float64."""
    return _core_iou_matrix(_as_boxes(preds), _as_boxes(gas)).values


def noise_loss(preds, gas) -> float:
    """Mean over predictions of the max IoU against any gas box."""
    return _core_noise_loss(_as_boxes(preds), _as_boxes(gas))
