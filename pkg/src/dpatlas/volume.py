"""Volume data model: typed dense 3D grids sharing one co-registered space.

All voxel arrays are indexed ``[x, y, z]`` and serialized x-fastest, matching
the NIfTI payload convention. Volumes are immutable after construction; the
backing arrays are marked read-only so they can be shared across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch

DATAKINDS = ("label-u16", "intensity-f32", "prob-f32")

_KIND_DTYPES = {
    "label-u16": np.dtype("<u2"),
    "intensity-f32": np.dtype("<f4"),
    "prob-f32": np.dtype("<f4"),
}


@dataclass(frozen=True)
class VolumeHeader:
    """Grid geometry plus the payload kind stored behind it."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    datakind: str

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        if self.datakind not in DATAKINDS:
            raise ValueError(f"unknown datakind {self.datakind!r}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def num_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def dtype(self) -> np.dtype:
        return _KIND_DTYPES[self.datakind]

    def same_grid(self, other: "VolumeHeader") -> bool:
        return self.dims == other.dims and self.spacing == other.spacing

    def with_kind(self, datakind: str) -> "VolumeHeader":
        return VolumeHeader(self.dims, self.spacing, datakind)


def _prepare_voxels(header: VolumeHeader, voxels: np.ndarray) -> np.ndarray:
    arr = np.asarray(voxels)
    if arr.shape != header.dims:
        raise ValueError(f"voxels shape {arr.shape} != header dims {header.dims}")
    arr = np.asfortranarray(arr, dtype=header.dtype)
    arr.setflags(write=False)
    return arr


@dataclass
class LabelVolume:
    """Dense grid of integer region labels; 0 is background, 1..K regions."""

    header: VolumeHeader
    voxels: np.ndarray
    num_labels: int

    def __post_init__(self):
        if self.header.datakind != "label-u16":
            raise ValueError("LabelVolume requires datakind label-u16")
        self.voxels = _prepare_voxels(self.header, self.voxels)
        self.num_labels = int(self.num_labels)
        if self.num_labels < 1:
            raise ValueError("num_labels must be >= 1")
        vmax = int(self.voxels.max()) if self.voxels.size else 0
        if vmax >= self.num_labels:
            raise ValueError(
                f"label value {vmax} >= num_labels {self.num_labels}"
            )

    def region_present(self, region: int) -> bool:
        return bool(np.any(self.voxels == region))


@dataclass
class IntensityVolume:
    """Dense grid of real-valued intensities; NaN/Inf are rejected."""

    header: VolumeHeader
    voxels: np.ndarray

    def __post_init__(self):
        if self.header.datakind != "intensity-f32":
            raise ValueError("IntensityVolume requires datakind intensity-f32")
        self.voxels = _prepare_voxels(self.header, self.voxels)
        if not np.isfinite(self.voxels).all():
            raise ValueError("intensity payload contains NaN or Inf")


@dataclass
class ProbMap:
    """Dense grid of probabilities in [0, 1]; binary masks are 0/1 ProbMaps."""

    header: VolumeHeader
    voxels: np.ndarray

    def __post_init__(self):
        if self.header.datakind != "prob-f32":
            raise ValueError("ProbMap requires datakind prob-f32")
        self.voxels = _prepare_voxels(self.header, self.voxels)
        if self.voxels.size and (
            not np.isfinite(self.voxels).all()
            or self.voxels.min() < 0.0
            or self.voxels.max() > 1.0
        ):
            raise ValueError("probability payload outside [0, 1]")

    def is_binary(self) -> bool:
        return bool(np.isin(self.voxels, (0.0, 1.0)).all())


Volume = LabelVolume | IntensityVolume | ProbMap


@dataclass
class ProbabilisticAtlas:
    """Stack of K+1 per-label probability maps on one grid (index 0 = background)."""

    maps: list[ProbMap] = field(default_factory=list)

    def __post_init__(self):
        if not self.maps:
            raise ValueError("atlas needs at least one label map")
        head = self.maps[0].header
        for m in self.maps[1:]:
            if not m.header.same_grid(head):
                raise GridMismatch("atlas label maps do not share one grid")

    @property
    def num_labels(self) -> int:
        return len(self.maps)

    @property
    def header(self) -> VolumeHeader:
        return self.maps[0].header

    def voxel_sums(self) -> np.ndarray:
        total = np.zeros(self.header.dims, dtype=np.float64)
        for m in self.maps:
            total += m.voxels
        return total

    def is_normalized(self, tol: float = 1e-6) -> bool:
        return bool(np.abs(self.voxel_sums() - 1.0).max() <= tol)

    @classmethod
    def from_labels(cls, seg: LabelVolume) -> "ProbabilisticAtlas":
        """One-hot encode a segmentation as a (trivially normalized) atlas."""
        header = seg.header.with_kind("prob-f32")
        maps = [
            ProbMap(header, (seg.voxels == k).astype(np.float32))
            for k in range(seg.num_labels)
        ]
        return cls(maps)


def require_same_grid(a, b, what: str = "volumes") -> None:
    ha = a if isinstance(a, VolumeHeader) else a.header
    hb = b if isinstance(b, VolumeHeader) else b.header
    if not ha.same_grid(hb):
        raise GridMismatch(
            f"{what} on different grids: dims {ha.dims}/{hb.dims}, "
            f"spacing {ha.spacing}/{hb.spacing}"
        )


def mask_apply(vol: IntensityVolume | ProbMap, mask: ProbMap):
    """Voxelwise multiplication of a volume by a binary {0,1} mask.

    Returns a new volume of the same type as ``vol``.
    """
    require_same_grid(vol, mask, "volume and mask")
    if not mask.is_binary():
        raise ValueError("mask values must be exactly 0 or 1")
    out = vol.voxels * mask.voxels
    if isinstance(vol, IntensityVolume):
        return IntensityVolume(vol.header, out)
    return ProbMap(vol.header, out)
