"""Surface reconstruction from unstructured point clouds.

Pipeline: 3D Delaunay tetrahedralization -> resolution-filtered subcomplex ->
boundary triangle mesh. The resolution parameter alpha in (0, 1] is unitless;
it is scaled by the bounding-box diagonal of the input cloud, so alpha = 1
keeps every tetrahedron and the boundary degenerates to the convex hull,
while small alpha carves concavities.

The boundary consists of two face families:
  * regular faces, adjacent to exactly one kept ("interior") tetrahedron;
  * singular faces, adjacent to no kept tetrahedron, whose circumcircle
    radius is within the resolution and whose diametral sphere is empty
    (Gabriel faces). These carry the surface when the input is a thin shell,
    e.g. points sampled on a sphere, where every tetrahedron is cospherical
    and has a large circumradius.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, cKDTree
from scipy.spatial import QhullError

from .errors import DegenerateGeometry, EmptyAlphaComplex, TooFewPoints
from .geometry import PointCloud

VOLUME_EPS = 1e-12      # m^3; tetrahedra thinner than this are discarded
AREA_EPS = 1e-12        # m^2; triangles thinner than this are discarded
COPLANAR_EXTENT = 1e-6  # m;   minimum extent along the flattest direction
MIN_POOL_POINTS = 30    # pool-entry minimum for reconstruct()


@dataclass(frozen=True)
class AlphaParam:
    """Unitless surface-reconstruction resolution in (0, 1]."""

    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")


@dataclass
class TetraComplex:
    """Delaunay tetrahedralization with per-tetra circumspheres.

    Attributes:
        vertices: (V, 3) float64.
        tetrahedra: (T, 4) int64, each row sorted ascending, rows in
            lexicographic order (canonical, deterministic).
        circumcenters: (T, 3) float64.
        circumradii: (T,) float64.
    """

    vertices: np.ndarray
    tetrahedra: np.ndarray
    circumcenters: np.ndarray
    circumradii: np.ndarray

    def __len__(self) -> int:
        return len(self.tetrahedra)


@dataclass
class TriangleMesh:
    """Triangle surface mesh with per-triangle areas.

    Attributes:
        vertices: (V, 3) float64; every vertex is referenced by >= 1 triangle.
        triangles: (T, 3) int64 vertex indices.
        areas: (T,) float64, each > 1e-12 m^2.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    areas: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.areas = np.asarray(self.areas, dtype=np.float64)
        if len(self.triangles) == 0 or self.total_area <= 0.0:
            raise ValueError("mesh must contain at least one triangle of positive area")
        if len(self.areas) != len(self.triangles):
            raise ValueError("areas must align with triangles")
        if self.areas.min() <= AREA_EPS:
            raise ValueError("mesh contains a (near-)zero-area triangle")
        referenced = np.unique(self.triangles)
        if len(referenced) != len(self.vertices):
            raise ValueError("mesh contains unreferenced vertices")

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _circumspheres(pts: np.ndarray, tets: np.ndarray):
    """Circumsphere center/radius per tetra; invalid rows get radius +inf."""
    a = pts[tets[:, 0]]
    b = pts[tets[:, 1]]
    c = pts[tets[:, 2]]
    d = pts[tets[:, 3]]
    ab, ac, ad = b - a, c - a, d - a
    vol = np.abs(np.linalg.det(np.stack([ab, ac, ad], axis=1))) / 6.0
    ok = vol > VOLUME_EPS
    centers = np.full((len(tets), 3), np.nan)
    radii = np.full(len(tets), np.inf)
    if ok.any():
        lhs = np.stack([2 * ab[ok], 2 * ac[ok], 2 * ad[ok]], axis=1)
        rhs = np.stack(
            [(ab[ok] ** 2).sum(1), (ac[ok] ** 2).sum(1), (ad[ok] ** 2).sum(1)], axis=1
        )
        centers[ok] = a[ok] + np.linalg.solve(lhs, rhs[..., None])[..., 0]
        radii[ok] = np.linalg.norm(centers[ok] - a[ok], axis=1)
    return centers, radii, ok


def delaunay3d(points) -> TetraComplex:
    """Delaunay tetrahedralization of >= 4 non-coplanar 3D points.

    Deterministic for identical input: the underlying triangulation is
    deterministic and the output tetra list is canonically sorted.
    Near-degenerate sliver tetrahedra (volume <= 1e-12 m^3) are dropped.

    Raises:
        TooFewPoints: fewer than 4 points.
        DegenerateGeometry: input is (near-)coplanar or the triangulation
            fails structurally.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 4:
        raise TooFewPoints(f"need >= 4 points for tetrahedralization, got {len(pts)}")
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    extent = centered @ vt[-1]
    if extent.max() - extent.min() <= COPLANAR_EXTENT:
        raise DegenerateGeometry("points are coplanar within 1e-6 m")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise DegenerateGeometry(f"triangulation failed: {exc}") from exc
    tets = np.sort(tri.simplices.astype(np.int64), axis=1)
    order = np.lexsort(tets.T[::-1])
    tets = tets[order]
    centers, radii, ok = _circumspheres(pts, tets)
    if not ok.any():
        raise DegenerateGeometry("all tetrahedra are degenerate")
    return TetraComplex(pts, tets[ok], centers[ok], radii[ok])


def interior_tetra_mask(complex_: TetraComplex, alpha: AlphaParam, scale: float) -> np.ndarray:
    """Boolean mask of tetrahedra kept at this resolution.

    A tetra is interior iff its circumradius <= alpha * scale. At alpha = 1
    every tetra is kept by definition (the hull limit; random inputs always
    contain boundary slivers whose circumradius exceeds any fixed scale).
    """
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    if alpha.alpha >= 1.0:
        return np.ones(len(complex_), dtype=bool)
    return complex_.circumradii <= alpha.alpha * scale


def _face_circumcircles(pts: np.ndarray, faces: np.ndarray):
    """In-plane circumcircle center and radius per triangle face."""
    a = pts[faces[:, 0]]
    b = pts[faces[:, 1]]
    c = pts[faces[:, 2]]
    ab, ac = b - a, c - a
    n = np.cross(ab, ac)
    n2 = (n * n).sum(axis=1)
    good = n2 > (2 * AREA_EPS) ** 2
    centers = np.full_like(a, np.nan)
    radii = np.full(len(faces), np.inf)
    num = np.cross((ab * ab).sum(1)[:, None] * ac - (ac * ac).sum(1)[:, None] * ab, n)
    centers[good] = a[good] + num[good] / (2.0 * n2[good, None])
    radii[good] = np.linalg.norm(centers[good] - a[good], axis=1)
    return centers, radii


def _gabriel_mask(pts: np.ndarray, faces: np.ndarray, centers, radii) -> np.ndarray:
    """True where the face's diametral sphere contains no other vertex."""
    k = min(4, len(pts))
    tree = cKDTree(pts)
    dist, idx = tree.query(centers, k=k)
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)
    mask = np.ones(len(faces), dtype=bool)
    for row in range(len(faces)):
        limit2 = radii[row] * radii[row] * (1.0 - 1e-9)
        own = set(faces[row])
        for d, i in zip(dist[row], idx[row]):
            if i in own:
                continue
            if d * d < limit2:
                mask[row] = False
                break
    return mask


def alpha_complex_boundary(
    complex_: TetraComplex, alpha: AlphaParam, scale: float
) -> TriangleMesh:
    """Boundary mesh of the resolution-filtered subcomplex.

    Regular faces touch exactly one interior tetra; singular Gabriel faces
    (no interior neighbor, circumcircle radius within resolution, empty
    diametral sphere) are added so shell-like inputs reconstruct correctly.
    Output triangles are canonically sorted; vertices are compacted.

    Raises:
        EmptyAlphaComplex: nothing qualifies at this resolution.
    """
    interior = interior_tetra_mask(complex_, alpha, scale)
    tets = complex_.tetrahedra
    interior_count: dict[tuple, int] = defaultdict(int)
    all_faces: set[tuple] = set()
    local_faces = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))
    for ti in range(len(tets)):
        row = tets[ti]
        is_int = interior[ti]
        for fa, fb, fc in local_faces:
            key = (row[fa], row[fb], row[fc])  # row is sorted, so key is too
            all_faces.add(key)
            if is_int:
                interior_count[key] += 1

    boundary = [f for f in all_faces if interior_count.get(f, 0) == 1]

    candidates = np.array(
        sorted(f for f in all_faces if interior_count.get(f, 0) == 0), dtype=np.int64
    ).reshape(-1, 3)
    if len(candidates):
        centers, radii = _face_circumcircles(complex_.vertices, candidates)
        small = radii <= alpha.alpha * scale
        if small.any():
            gab = _gabriel_mask(
                complex_.vertices, candidates[small], centers[small], radii[small]
            )
            boundary.extend(map(tuple, candidates[small][gab]))

    if not boundary:
        raise EmptyAlphaComplex(
            f"no boundary triangle at alpha={alpha.alpha:.6g} (scale {scale:.6g} m)"
        )

    faces = np.array(sorted(boundary), dtype=np.int64)
    areas = triangle_areas(complex_.vertices, faces)
    keep = areas > AREA_EPS
    faces, areas = faces[keep], areas[keep]
    if len(faces) == 0:
        raise EmptyAlphaComplex("all boundary triangles are degenerate")

    used = np.unique(faces)
    remap = np.full(len(complex_.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(complex_.vertices[used], remap[faces], areas)


def reconstruct(cloud: PointCloud, alpha: AlphaParam) -> TriangleMesh:
    """Reconstruct a surface mesh from an unstructured cloud.

    The resolution scale is the length of the cloud's axis-aligned
    bounding-box diagonal, so alpha is scale-invariant.

    Raises:
        TooFewPoints: cloud below the 30-point pool-entry minimum.
        DegenerateGeometry, EmptyAlphaComplex: propagated from the stages.
    """
    if len(cloud) < MIN_POOL_POINTS:
        raise TooFewPoints(
            f"reconstruction needs >= {MIN_POOL_POINTS} points, got {len(cloud)}"
        )
    xyz = cloud.xyz
    scale = float(np.linalg.norm(xyz.max(axis=0) - xyz.min(axis=0)))
    if scale <= 0.0:
        raise DegenerateGeometry("cloud has zero spatial extent")
    return alpha_complex_boundary(delaunay3d(xyz), alpha, scale)
