"""Dataset, pool and configuration persistence.

File formats:
  * Point clouds: headerless binary, little-endian float32, 4 values per
    point (x, y, z, reflectivity) -- the KITTI velodyne convention.
    Generated pool clouds use the same layout with float64 values (their
    invariants do not survive float32 quantization).
  * Labels / predictions: KITTI whitespace-delimited text, 15 fields
    (class, truncation, occlusion, alpha, 4 x 2D bbox, h, w, l, x, y, z,
    yaw), predictions add a 16th score field. Floats are written with repr
    precision so write-then-read is lossless.
  * Sensor spec: '#' comments, then one header line
    "<azimuth_bin_width> <max_range>", then one layer elevation per line.
  * Run configs and manifests: "key=value" lines, '#' comments.

Labels are assumed to live in the sensor frame (x forward, y left, z up,
location = box center). Pass kitti_camera_frame=True to apply the nominal
KITTI camera-to-lidar conversion (axis swap plus bottom-center to center).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, MalformedFile, ParseError
from .generation import GasCloud, GasCloudPool, GasProvenance
from .geometry import Box3D, Detection, GtObject, PointCloud
from .resampler import SensorSpec
from .seeding import derive_seed  # re-exported: stage seeds are an IO contract

__all__ = [
    "read_point_cloud",
    "write_point_cloud",
    "read_labels",
    "read_predictions",
    "read_boxes",
    "write_labels",
    "write_predictions",
    "write_gas_boxes",
    "read_sensor_spec",
    "write_sensor_spec",
    "save_pool",
    "load_pool",
    "DatasetLayout",
    "RunConfig",
    "write_manifest",
    "derive_seed",
    "reflectivity_clamp_count",
    "reset_reflectivity_clamp_count",
]

logger = logging.getLogger(__name__)

GAS_BOX_CLASS = "GasExhaust"
POOL_MANIFEST = "pool_manifest.txt"

_clamped_reflectivities = 0


def reflectivity_clamp_count() -> int:
    """Total reflectivity values clamped into [0, 1] since the last reset."""
    return _clamped_reflectivities


def reset_reflectivity_clamp_count() -> None:
    global _clamped_reflectivities
    _clamped_reflectivities = 0


def read_point_cloud(path, dtype: str = "<f4") -> PointCloud:
    """Read a headerless x/y/z/reflectivity binary file.

    Out-of-range reflectivities are clamped into [0, 1]; the number of
    clamped values is added to the module's warning counter.

    Raises:
        MalformedFile: file size is not a multiple of the record size.
    """
    global _clamped_reflectivities
    path = Path(path)
    record = 4 * np.dtype(dtype).itemsize
    size = path.stat().st_size
    if size % record != 0:
        raise MalformedFile(
            f"{path}: {size} bytes is not a multiple of the {record}-byte record"
        )
    raw = np.fromfile(path, dtype=dtype).astype(np.float64).reshape(-1, 4)
    bad = (raw[:, 3] < 0.0) | (raw[:, 3] > 1.0)
    if bad.any():
        _clamped_reflectivities += int(bad.sum())
        logger.warning(
            "%s: clamped %d reflectivity values into [0, 1]", path, int(bad.sum())
        )
        raw[:, 3] = np.clip(raw[:, 3], 0.0, 1.0)
    return PointCloud(raw, frame_id=path.stem)


def write_point_cloud(cloud: PointCloud, path, dtype: str = "<f4") -> None:
    path = Path(path)
    cloud.points.astype(dtype).tofile(path)


def _fmt(v: float) -> str:
    return repr(float(v))


def _camera_to_sensor(h, w, l, x, y, z, ry):
    """Nominal KITTI camera frame -> sensor frame (no per-scan calibration).

    Camera: x right, y down, z forward, location at the box bottom center.
    Sensor: x forward, y left, z up, location at the box center.
    """
    return l, w, h, z, -x, -y + h / 2.0, -ry - math.pi / 2.0


def _parse_box_line(parts: list[str], kitti_camera_frame: bool) -> tuple[str, float, int, Box3D]:
    label = parts[0]
    truncation = float(parts[1])
    occlusion = int(float(parts[2]))
    h, w, l = (float(v) for v in parts[8:11])
    x, y, z = (float(v) for v in parts[11:14])
    ry = float(parts[14])
    if kitti_camera_frame:
        l, w, h, x, y, z, ry = _camera_to_sensor(h, w, l, x, y, z, ry)
    return label, truncation, occlusion, Box3D((x, y, z), (l, w, h), ry)


def read_labels(path, kitti_camera_frame: bool = False) -> list[GtObject]:
    """Parse a 15-field KITTI label file. Empty files give zero boxes.

    Raises:
        ParseError: with the offending 1-based line number.
    """
    out: list[GtObject] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 15:
            raise ParseError(f"expected 15 fields, got {len(parts)}", lineno)
        try:
            label, trunc, occ, box = _parse_box_line(parts, kitti_camera_frame)
            out.append(GtObject(box, label, occ, trunc))
        except (ValueError, IndexError) as exc:
            raise ParseError(str(exc), lineno) from exc
    return out


def read_predictions(path, kitti_camera_frame: bool = False) -> list[Detection]:
    """Parse a 16-field prediction file (labels plus trailing score)."""
    out: list[Detection] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 16:
            raise ParseError(
                f"predictions need 16 fields (score included), got {len(parts)}",
                lineno,
            )
        try:
            _, _, _, box = _parse_box_line(parts, kitti_camera_frame)
            out.append(Detection(box, float(parts[15])))
        except (ValueError, IndexError) as exc:
            raise ParseError(str(exc), lineno) from exc
    return out


def read_boxes(path, kitti_camera_frame: bool = False) -> list[Box3D]:
    """Boxes from either a label (15-field) or prediction (16-field) file."""
    boxes: list[Box3D] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) not in (15, 16):
            raise ParseError(f"expected 15 or 16 fields, got {len(parts)}", lineno)
        try:
            boxes.append(_parse_box_line(parts, kitti_camera_frame)[3])
        except (ValueError, IndexError) as exc:
            raise ParseError(str(exc), lineno) from exc
    return boxes


def _box_fields(label: str, truncation: float, occlusion: int, box: Box3D) -> list[str]:
    l, w, h = box.dims
    x, y, z = box.center
    return [
        label,
        _fmt(truncation),
        str(int(occlusion)),
        "-10",  # viewing angle: unknown without images
        "0", "0", "0", "0",  # 2D bbox: unknown without images
        _fmt(h), _fmt(w), _fmt(l),
        _fmt(x), _fmt(y), _fmt(z),
        _fmt(box.yaw),
    ]


def write_labels(objects: list[GtObject], path) -> None:
    lines = [
        " ".join(_box_fields(o.label, o.truncation, o.occlusion, o.box))
        for o in objects
    ]
    Path(path).write_text("".join(line + "\n" for line in lines))


def write_predictions(dets: list[Detection], path, label: str = "Car") -> None:
    lines = [
        " ".join(_box_fields(label, 0.0, 0, d.box) + [_fmt(d.score)]) for d in dets
    ]
    Path(path).write_text("".join(line + "\n" for line in lines))


def write_gas_boxes(boxes: list[Box3D], path) -> None:
    """Persist a frame's gas box set as a label sidecar (class GasExhaust)."""
    objs = [GtObject(b, GAS_BOX_CLASS) for b in boxes]
    write_labels(objs, path)


def read_sensor_spec(path) -> SensorSpec:
    lines = [
        ln.strip()
        for ln in Path(path).read_text().splitlines()
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not lines:
        raise ParseError(f"{path}: empty sensor spec")
    try:
        header = lines[0].split()
        bin_width, max_range = float(header[0]), float(header[1])
        elevations = tuple(float(ln) for ln in lines[1:])
        return SensorSpec(elevations, bin_width, max_range)
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_sensor_spec(spec: SensorSpec, path) -> None:
    lines = ["# azimuth_bin_width max_range, then one layer elevation per line"]
    lines.append(f"{_fmt(spec.azimuth_bin_width)} {_fmt(spec.max_range)}")
    lines.extend(_fmt(e) for e in spec.layer_elevations)
    Path(path).write_text("".join(line + "\n" for line in lines))


def save_pool(pool: GasCloudPool, root) -> None:
    """Write a pool directory: float32 sources, float64 generated clouds,
    plus a provenance manifest."""
    root = Path(root)
    (root / "sources").mkdir(parents=True, exist_ok=True)
    (root / "generated").mkdir(parents=True, exist_ok=True)
    lines = ["# gasaug pool manifest"]
    for src in pool.sources:
        if not src.frame_id or any(ch.isspace() for ch in src.frame_id):
            raise DataError(f"source id {src.frame_id!r} must be non-empty, no spaces")
        write_point_cloud(src, root / "sources" / f"{src.frame_id}.bin")
        lines.append(f"source {src.frame_id}")
    for i, gas in enumerate(pool.generated):
        gid = f"g{i:06d}"
        write_point_cloud(gas.cloud, root / "generated" / f"{gid}.bin", dtype="<f8")
        p = gas.provenance
        if p.kind == "surface":
            lines.append(
                f"generated {gid} surface {p.source_id} {_fmt(p.alpha)} {p.n_points}"
            )
        else:
            lines.append(f"generated {gid} noise {_fmt(p.sigma)} {p.k}")
    (root / POOL_MANIFEST).write_text("".join(line + "\n" for line in lines))


def load_pool(root) -> GasCloudPool:
    """Read a pool directory written by :func:`save_pool`."""
    root = Path(root)
    manifest = root / POOL_MANIFEST
    if not manifest.exists():
        raise DataError(f"{root}: missing {POOL_MANIFEST}")
    pool = GasCloudPool()
    for lineno, line in enumerate(manifest.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "source":
                pool.add_source(read_point_cloud(root / "sources" / f"{parts[1]}.bin"))
            elif parts[0] == "generated":
                gid, kind = parts[1], parts[2]
                cloud = read_point_cloud(
                    root / "generated" / f"{gid}.bin", dtype="<f8"
                )
                if kind == "surface":
                    prov = GasProvenance(
                        "surface",
                        source_id=parts[3],
                        alpha=float(parts[4]),
                        n_points=int(parts[5]),
                    )
                elif kind == "noise":
                    prov = GasProvenance(
                        "random_noise", sigma=float(parts[3]), k=int(parts[4])
                    )
                else:
                    raise ValueError(f"unknown provenance kind {kind!r}")
                # already centroid-centered on disk; rebuild without recentering
                pool.generated.append(
                    GasCloud(
                        PointCloud(cloud.points),
                        GasCloud.tight_box_of(cloud.xyz),
                        prov,
                    )
                )
            else:
                raise ValueError(f"unknown entry {parts[0]!r}")
        except (ValueError, IndexError, OSError) as exc:
            raise ParseError(f"{manifest}: {exc}", lineno) from exc
    return pool


@dataclass(frozen=True)
class DatasetLayout:
    """KITTI-style directory layout.

    root/clouds/<id>.bin, root/labels/<id>.txt, root/predictions/<id>.txt,
    root/gas_boxes/<id>.txt. Frame ids must be consistent across the
    subdirectories that exist.
    """

    root: Path

    def __init__(self, root):
        object.__setattr__(self, "root", Path(root))

    @property
    def clouds(self) -> Path:
        return self.root / "clouds"

    @property
    def labels(self) -> Path:
        return self.root / "labels"

    @property
    def predictions(self) -> Path:
        return self.root / "predictions"

    @property
    def gas_boxes(self) -> Path:
        return self.root / "gas_boxes"

    def cloud_path(self, frame_id: str) -> Path:
        return self.clouds / f"{frame_id}.bin"

    def label_path(self, frame_id: str) -> Path:
        return self.labels / f"{frame_id}.txt"

    def prediction_path(self, frame_id: str) -> Path:
        return self.predictions / f"{frame_id}.txt"

    def gas_path(self, frame_id: str) -> Path:
        return self.gas_boxes / f"{frame_id}.txt"

    def frame_ids(self) -> list[str]:
        """Sorted frame ids, taken from the first populated subdirectory."""
        for directory, pattern in (
            (self.clouds, "*.bin"),
            (self.labels, "*.txt"),
            (self.predictions, "*.txt"),
        ):
            if directory.is_dir():
                ids = sorted(p.stem for p in directory.glob(pattern))
                if ids:
                    return ids
        return []

    def validate(self) -> list[str]:
        """Check id consistency across populated subdirectories.

        Returns the frame ids; raises DataError on mismatch.
        """
        ids = self.frame_ids()
        reference = set(ids)
        for directory, pattern in (
            (self.clouds, "*.bin"),
            (self.labels, "*.txt"),
            (self.predictions, "*.txt"),
        ):
            if directory.is_dir():
                found = {p.stem for p in directory.glob(pattern)}
                if found and found != reference:
                    missing = sorted(reference - found)[:3]
                    extra = sorted(found - reference)[:3]
                    raise DataError(
                        f"{directory}: frame ids inconsistent "
                        f"(missing {missing}, unexpected {extra})"
                    )
        return ids


@dataclass
class RunConfig:
    """key=value configuration; CLI flags override file values."""

    values: dict[str, str]

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        values: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", lineno)
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        return cls(values)

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)


def write_manifest(path, values: dict) -> None:
    """Write a reproduction manifest (config + seed + toolkit version)."""
    lines = ["# gasaug run manifest"]
    lines.extend(f"{k}={v}" for k, v in values.items())
    Path(path).write_text("".join(line + "\n" for line in lines))
