"""Gas-exhaust point cloud toolkit.

Generates synthetic exhaust clouds from a small labeled pool (surface
reconstruction + sampling), pastes them into LiDAR detection frames with a
sensor-aware resampling step, scores prediction/gas-box overlap for a
noise-robustness training loss, and evaluates detectors with R40 average
precision under a noise-injection protocol.
"""

__version__ = "0.1.0"

from . import io  # noqa: F401  (gasaug.io: dataset/pool persistence)
from .alphashape import (
    AlphaParam,
    TetraComplex,
    TriangleMesh,
    alpha_complex_boundary,
    delaunay3d,
    interior_tetra_mask,
    reconstruct,
)
from .augment import (
    AugmentedFrame,
    AugmentParams,
    Placement,
    PlacementKind,
    augment_frame,
    choose_placement,
    insert_cloud,
    schedule_p_aug,
)
from .errors import (
    DataError,
    DegenerateGeometry,
    EmptyAlphaComplex,
    EmptyMesh,
    EmptyPool,
    EmptySource,
    GasAugError,
    GenerationFailed,
    InvalidLabel,
    MalformedFile,
    NoGroundTruth,
    NOutOfRange,
    OriginPoint,
    ParseError,
    TooFewPoints,
)
from .evaluation import (
    APResult,
    Difficulty,
    EvalConfig,
    MatchCounts,
    NoiseProtocolParams,
    assign_difficulty,
    average_precision_r40,
    inject_noise,
    match_detections,
)
from .generation import (
    GasCloud,
    GasCloudPool,
    GasProvenance,
    generate_cloud,
    generate_random_noise_cloud,
    sample_surface,
    transfer_reflectivity,
)
from .geometry import (
    DEFAULT_VEHICLE_CLASSES,
    Box3D,
    Detection,
    DetectionFrame,
    GtObject,
    Point,
    PointCloud,
    box_corners,
    from_box_frame,
    normalize_yaw,
    points_in_box,
    to_box_frame,
)
from .loss import (
    DEFAULT_BETA,
    IoUMatrix,
    LossBreakdown,
    bev_intersection_area,
    bev_iou,
    iou3d,
    iou_matrix,
    noise_loss,
    total_loss,
)
from .resampler import (
    SensorSpec,
    SphericalPoint,
    cartesian_to_spherical,
    resample_to_sensor,
    sensor_preset,
    spherical_to_cartesian,
)
from .seeding import SeededRng, derive_seed, fnv1a64
