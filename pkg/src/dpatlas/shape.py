"""Boundary-vertex extraction and propagation for per-region shape models.

Vertices live on region boundaries: the centers of voxel faces that separate
a region from everything else. Coordinates are physical (voxel index times
spacing, mm). Index order defines correspondence: point ``m`` extracted on
the mean segmentation corresponds to point ``m`` propagated onto any subject.

The default propagation strategy projects each mean vertex onto the nearest
boundary face center of the subject's region. A dense displacement field can
be supplied instead (``external-field``) when true registration output is
available.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial import cKDTree

from .errors import FormatError, InsufficientSurface, RegionMissing
from .fusion import MeanSegmentation
from .volume import IntensityVolume, LabelVolume, require_same_grid

STRATEGIES = ("boundary-projection", "external-field")


@dataclass
class CorrespondenceConfig:
    vertices_per_region: int = 128
    strategy: str = "boundary-projection"
    seed: int = 0

    def __post_init__(self):
        if self.vertices_per_region < 4:
            raise ValueError("vertices_per_region must be >= 4")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass
class VertexSet:
    """Ordered (M, 3) point list for one region; order carries correspondence."""

    region: int
    points: np.ndarray
    source_subject: int | str = "mean"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 4:
            raise ValueError(f"points must be (M>=4, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("vertex coordinates must be finite")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]


def boundary_face_centers(seg: LabelVolume, region: int) -> np.ndarray:
    """All face centers separating ``region`` from non-region, in mm.

    The grid border counts as outside. Output order is fixed (axis, then
    direction, then lexicographic voxel order), so results are reproducible.
    """
    mask = seg.voxels == region
    if not mask.any():
        raise RegionMissing(f"region {region} absent from volume")
    centers = []
    for axis in range(3):
        for direction in (-1, 1):
            neighbor = np.zeros_like(mask)
            src = [slice(None)] * 3
            dst = [slice(None)] * 3
            if direction == 1:
                dst[axis] = slice(None, -1)
                src[axis] = slice(1, None)
            else:
                dst[axis] = slice(1, None)
                src[axis] = slice(None, -1)
            neighbor[tuple(dst)] = mask[tuple(src)]
            exposed = np.argwhere(mask & ~neighbor).astype(np.float64)
            exposed[:, axis] += 0.5 * direction
            centers.append(exposed)
    faces = np.concatenate(centers, axis=0)
    return faces * np.asarray(seg.header.spacing, dtype=np.float64)


def _farthest_point_subsample(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy farthest-point sampling, started at the lexicographically
    smallest point; exact-distance ties are broken by the seeded rng."""
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0]))
    chosen = [order[0]]
    d2 = ((points - points[order[0]]) ** 2).sum(axis=1)
    for _ in range(m - 1):
        dmax = d2.max()
        ties = np.flatnonzero(d2 == dmax)
        nxt = int(ties[0]) if ties.size == 1 else int(rng.choice(ties))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[chosen]


def extract_mean_vertices(
    mean: MeanSegmentation, region: int, cfg: CorrespondenceConfig
) -> VertexSet:
    """Extract ``cfg.vertices_per_region`` boundary vertices of one region
    on the mean segmentation."""
    faces = boundary_face_centers(mean.volume, region)
    if faces.shape[0] < cfg.vertices_per_region:
        raise InsufficientSurface(
            f"region {region}: {faces.shape[0]} boundary faces < "
            f"{cfg.vertices_per_region} requested vertices"
        )
    rng = np.random.default_rng(cfg.seed)
    points = _farthest_point_subsample(faces, cfg.vertices_per_region, rng)
    return VertexSet(region, points, "mean")


def _trilinear(channel: np.ndarray, voxel_coords: np.ndarray) -> np.ndarray:
    return map_coordinates(
        channel.astype(np.float64), voxel_coords.T, order=1, mode="nearest"
    )


def propagate_vertices(
    mean_vertices: VertexSet,
    subject_seg: LabelVolume,
    strategy: str = "boundary-projection",
    displacement: tuple[IntensityVolume, IntensityVolume, IntensityVolume] | None = None,
    subject_id: int | str = "subject",
) -> VertexSet:
    """Map mean vertices onto one subject, preserving index correspondence.

    ``boundary-projection`` snaps each vertex to the subject region's nearest
    boundary face center. ``external-field`` displaces each vertex by a dense
    (dx, dy, dz) field in mm, trilinearly interpolated at the vertex.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "boundary-projection":
        faces = boundary_face_centers(subject_seg, mean_vertices.region)
        # sort candidates so nearest-neighbor ties resolve to the
        # lexicographically smallest face center
        faces = faces[np.lexsort((faces[:, 2], faces[:, 1], faces[:, 0]))]
        _, nearest = cKDTree(faces).query(mean_vertices.points)
        points = faces[nearest]
    else:
        if displacement is None or len(displacement) != 3:
            raise ValueError("external-field strategy needs a 3-channel displacement")
        for channel in displacement:
            require_same_grid(subject_seg, channel, "segmentation and displacement")
        spacing = np.asarray(subject_seg.header.spacing, dtype=np.float64)
        voxel_coords = mean_vertices.points / spacing
        shift = np.stack(
            [_trilinear(ch.voxels, voxel_coords) for ch in displacement], axis=1
        )
        points = mean_vertices.points + shift
    return VertexSet(mean_vertices.region, points, subject_id)


def save_vertices(vs: VertexSet, path) -> None:
    """Write the text table: ``region k count M`` then M ``x y z`` rows."""
    lines = [f"region {vs.region} count {len(vs)}"]
    for x, y, z in vs.points:
        lines.append(f"{x:.9g} {y:.9g} {z:.9g}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_vertices(path, source_subject: int | str = "mean") -> VertexSet:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty vertex table")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "region" or head[2] != "count":
        raise FormatError(f"{path}: bad header {lines[0]!r}")
    region, count = int(head[1]), int(head[3])
    if len(lines) - 1 != count:
        raise FormatError(f"{path}: expected {count} rows, found {len(lines) - 1}")
    points = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    return VertexSet(region, points, source_subject)
