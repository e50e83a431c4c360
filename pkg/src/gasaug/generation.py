"""Synthetic gas-cloud generation from a small labeled pool.

A labeled exhaust cloud is turned into many variants by reconstructing its
surface at a random resolution, uniformly sampling a random number of points
on that surface, and carrying each sample's reflectivity over from its
nearest labeled neighbor. A random-noise generator (isotropic Gaussian blob)
provides the ablation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .alphashape import MIN_POOL_POINTS, AlphaParam, TriangleMesh, reconstruct
from .errors import (
    EmptyAlphaComplex,
    EmptyMesh,
    EmptyPool,
    EmptySource,
    GenerationFailed,
    NOutOfRange,
    TooFewPoints,
)
from .geometry import Box3D, PointCloud
from .seeding import SeededRng

N_MIN, N_MAX = 100, 1000      # sampled points per generated cloud
SIGMA_MAX = 0.2               # m; random-noise baseline spread
ALPHA_RETRIES = 5             # doublings after the first empty-complex failure


@dataclass(frozen=True)
class GasProvenance:
    """How a generated cloud came to be; recorded for reproducibility."""

    kind: str                     # "surface" or "random_noise"
    source_id: str = ""
    alpha: float | None = None    # surface: resolution actually used
    n_points: int | None = None   # surface: sample count
    sigma: float | None = None    # random_noise: Gaussian spread
    k: int | None = None          # random_noise: point count


@dataclass
class GasCloud:
    """Generated exhaust cloud in its canonical (centroid-at-origin) frame.

    tight_box is the minimal axis-aligned box (yaw 0) containing all points;
    after placement it becomes a member of the gas box set.
    """

    cloud: PointCloud
    tight_box: Box3D
    provenance: GasProvenance

    def __post_init__(self):
        n = len(self.cloud)
        if not N_MIN <= n <= N_MAX:
            raise ValueError(f"gas cloud must hold {N_MIN}..{N_MAX} points, got {n}")

    @staticmethod
    def tight_box_of(xyz: np.ndarray) -> Box3D:
        mn, mx = xyz.min(axis=0), xyz.max(axis=0)
        center = (mn + mx) / 2.0
        # 1e-9 per side keeps boundary samples inside through float rounding
        # and later rigid transforms; the box stays minimal to within 2e-9 m
        dims = np.maximum(mx - mn, 0.0) + 2e-9
        return Box3D(tuple(center), tuple(dims), 0.0)

    @classmethod
    def from_points(cls, points: np.ndarray, provenance: GasProvenance) -> "GasCloud":
        """Recenter to the centroid and derive the tight box."""
        pts = np.array(points, dtype=np.float64)
        pts[:, :3] -= pts[:, :3].mean(axis=0)
        cloud = PointCloud(pts)
        return cls(cloud, cls.tight_box_of(cloud.xyz), provenance)


@dataclass
class GasCloudPool:
    """Labeled source clouds plus the generated variants drawn at augment time."""

    sources: list[PointCloud] = field(default_factory=list)
    generated: list[GasCloud] = field(default_factory=list)

    def add_source(self, cloud: PointCloud) -> None:
        if len(cloud) < MIN_POOL_POINTS:
            raise TooFewPoints(
                f"pool sources need >= {MIN_POOL_POINTS} points, got {len(cloud)}"
            )
        self.sources.append(cloud)

    def draw(self, rng: SeededRng) -> GasCloud:
        """Uniform draw from the generated clouds."""
        if not self.generated:
            raise EmptyPool("pool holds no generated clouds")
        return self.generated[rng.randint(0, len(self.generated) - 1)]


def sample_surface(mesh: TriangleMesh, n: int, rng: SeededRng) -> np.ndarray:
    """Uniformly sample n points on a triangle mesh.

    A triangle is selected with probability proportional to its area, then a
    point is drawn by folded barycentric sampling: u, v ~ U[0,1); if
    u + v > 1 then u <- 1-u, v <- 1-v. Draw order (selector, u, v) is fixed.

    Returns an (n, 3) array of points lying on the mesh surface.
    """
    if not N_MIN <= n <= N_MAX:
        raise NOutOfRange(f"sample count must be in [{N_MIN}, {N_MAX}], got {n}")
    if mesh.total_area <= 0.0:
        raise EmptyMesh("mesh has zero total area")
    cum = np.cumsum(mesh.areas)
    cum /= cum[-1]
    tri_idx = np.searchsorted(cum, rng.random(n), side="right")
    tri_idx = np.minimum(tri_idx, len(mesh.triangles) - 1)
    u = rng.random(n)
    v = rng.random(n)
    fold = u + v > 1.0
    u[fold] = 1.0 - u[fold]
    v[fold] = 1.0 - v[fold]
    tri = mesh.vertices[mesh.triangles[tri_idx]]  # (n, 3 corners, 3)
    return tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])


def transfer_reflectivity(samples: np.ndarray, source: PointCloud) -> PointCloud:
    """Assign each sample the reflectivity of its nearest source point.

    Distance is Euclidean; ties are broken toward the lowest source index.
    A k-d tree narrows the candidates, then squared distances are re-evaluated
    with plain numpy so the result matches a brute-force scan exactly.
    """
    if len(source) == 0:
        raise EmptySource("cannot transfer reflectivity from an empty cloud")
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    src_xyz = source.xyz
    tree = cKDTree(src_xyz)
    dist, _ = tree.query(samples)
    balls = tree.query_ball_point(samples, dist * (1.0 + 1e-9) + 1e-300)
    refl = np.empty(len(samples))
    for i, cand in enumerate(balls):
        cand = np.sort(np.asarray(cand, dtype=np.intp))
        d2 = ((src_xyz[cand] - samples[i]) ** 2).sum(axis=1)
        refl[i] = source.reflectivity[cand[np.argmin(d2)]]
    return PointCloud(np.column_stack([samples, refl]))


def generate_cloud(source: PointCloud, rng: SeededRng) -> GasCloud:
    """Generate one surface-sampled gas cloud from a labeled source.

    Draws alpha ~ U(0, 1] and N ~ U{100..1000}, reconstructs the surface,
    samples it, transfers reflectivity, and recenters to the centroid. If the
    complex is empty at the drawn alpha, alpha doubles (capped at 1) up to
    5 retries; no extra random draws are consumed, so replay is exact.

    Raises:
        GenerationFailed: the retry budget is exhausted.
    """
    alpha = rng.uniform_open_closed(1.0)
    n = rng.randint(N_MIN, N_MAX)
    mesh = None
    for _ in range(ALPHA_RETRIES + 1):
        try:
            mesh = reconstruct(source, AlphaParam(alpha))
            break
        except EmptyAlphaComplex:
            if alpha >= 1.0:
                break
            alpha = min(1.0, 2.0 * alpha)
    if mesh is None:
        raise GenerationFailed(
            f"no reconstructable surface for source '{source.frame_id}' "
            f"after {ALPHA_RETRIES} alpha doublings"
        )
    samples = sample_surface(mesh, n, rng)
    sampled = transfer_reflectivity(samples, source)
    provenance = GasProvenance(
        "surface", source_id=source.frame_id, alpha=alpha, n_points=n
    )
    return GasCloud.from_points(sampled.points, provenance)


def generate_random_noise_cloud(rng: SeededRng) -> GasCloud:
    """Ablation baseline: isotropic Gaussian blob instead of a sampled surface.

    Draws sigma ~ U(0, 0.2] and k ~ U{100..1000}; points are i.i.d.
    N(0, sigma^2 I) in 3D with reflectivity ~ U[0, 1].
    """
    sigma = rng.uniform_open_closed(SIGMA_MAX)
    k = rng.randint(N_MIN, N_MAX)
    xyz = rng.normal(0.0, sigma, (k, 3))
    refl = rng.random(k)
    provenance = GasProvenance("random_noise", sigma=sigma, k=k)
    return GasCloud.from_points(np.column_stack([xyz, refl]), provenance)
