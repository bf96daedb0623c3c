"""Per-region atlas dictionary: cluster-averaged probabilistic atlases
(targets) indexed by masked cluster-averaged anatomical templates.

For each region the cluster probability atlas is the voxelwise fraction of
member subjects carrying that label, the anatomical template is the voxelwise
mean member image, the candidate-zone mask thresholds the cluster-mean
probability at 0.01 (strict), and the stored anatomical atlas is the template
under that mask. A global tissue mask marks voxels that are non-background in
more than 95% of training subjects.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .apclust import ClusteringResult
from .errors import (
    ClusteringFailed,
    DegenerateMaskWarning,
    EmptyCluster,
    FormatError,
    GridMismatch,
    IntegrityError,
)
from .volio import read_volume, write_volume
from .volume import (
    IntensityVolume,
    LabelVolume,
    ProbMap,
    mask_apply,
    require_same_grid,
)

PROB_MASK_THRESHOLD = 0.01
TISSUE_THRESHOLD = 0.95

MANIFEST_NAME = "manifest.json"
TISSUE_MASK_FILE = "tissue_mask.vol"


@dataclass
class RegionalEntry:
    cluster: int
    member_count: int
    prob_atlas: ProbMap
    anat_atlas: IntensityVolume


@dataclass
class RegionDictionary:
    region: int
    mask: ProbMap
    entries: list[RegionalEntry]


@dataclass
class AtlasDictionary:
    regions: dict[int, RegionDictionary]
    tissue_mask: ProbMap
    provenance: dict = field(default_factory=dict)

    @property
    def num_regions(self) -> int:
        return len(self.regions)

    @property
    def header(self):
        return self.tissue_mask.header

    def region_ids(self) -> list[int]:
        return sorted(self.regions)


def cluster_prob_atlas(
    segmentations: list[LabelVolume], region: int, members: list[int]
) -> ProbMap:
    """Voxelwise fraction of member subjects whose label equals ``region``."""
    if not members:
        raise EmptyCluster(f"region {region}: empty member list")
    acc = np.zeros(segmentations[members[0]].header.dims, dtype=np.float64)
    for i in members:
        acc += segmentations[i].voxels == region
    prob = (acc / len(members)).astype(np.float32)
    if not prob.any():
        warnings.warn(
            f"region {region}: no member contains the label; zero atlas",
            DegenerateMaskWarning,
            stacklevel=2,
        )
    header = segmentations[members[0]].header.with_kind("prob-f32")
    return ProbMap(header, prob)


def cluster_anat_template(
    images: list[IntensityVolume], members: list[int]
) -> IntensityVolume:
    """Voxelwise mean intensity over the member subjects."""
    if not members:
        raise EmptyCluster("empty member list")
    head = images[members[0]]
    acc = np.zeros(head.header.dims, dtype=np.float64)
    for i in members:
        require_same_grid(head, images[i], "cluster images")
        acc += images[i].voxels
    return IntensityVolume(head.header, (acc / len(members)).astype(np.float32))


def region_mask(cluster_prob_atlases: list[ProbMap]) -> ProbMap:
    """Binary candidate zone: voxels where the unweighted mean over cluster
    atlases strictly exceeds 0.01."""
    if not cluster_prob_atlases:
        raise EmptyCluster("no cluster atlases to average")
    head = cluster_prob_atlases[0]
    mean = np.zeros(head.header.dims, dtype=np.float64)
    for atlas in cluster_prob_atlases:
        require_same_grid(head, atlas, "cluster atlases")
        mean += atlas.voxels
    mean /= len(cluster_prob_atlases)
    mask = (mean > PROB_MASK_THRESHOLD).astype(np.float32)
    if not mask.any():
        warnings.warn("region mask is empty", DegenerateMaskWarning, stacklevel=2)
    return ProbMap(head.header, mask)


def tissue_mask(segmentations: list[LabelVolume]) -> ProbMap:
    """Binary map of voxels that are non-background in more than 95% of
    training subjects (strict threshold)."""
    if not segmentations:
        raise EmptyCluster("no segmentations for tissue mask")
    head = segmentations[0]
    freq = np.zeros(head.header.dims, dtype=np.float64)
    for seg in segmentations:
        freq += seg.voxels != 0
    freq /= len(segmentations)
    return ProbMap(
        head.header.with_kind("prob-f32"),
        (freq > TISSUE_THRESHOLD).astype(np.float32),
    )


def build_dictionary(
    segmentations: list[LabelVolume],
    images: list[IntensityVolume],
    clusterings: dict[int, ClusteringResult],
    provenance: dict | None = None,
) -> AtlasDictionary:
    """Assemble the full dictionary from one clustering per region.

    Cluster ids are 0-based positions in the sorted exemplar list.
    """
    if len(segmentations) != len(images):
        raise GridMismatch(
            f"{len(segmentations)} segmentations vs {len(images)} images"
        )
    for seg, img in zip(segmentations, images):
        require_same_grid(segmentations[0], seg, "segmentations")
        require_same_grid(segmentations[0], img, "images")

    regions: dict[int, RegionDictionary] = {}
    for k in sorted(clusterings):
        clustering = clusterings[k]
        members_by_exemplar = clustering.members()
        if not members_by_exemplar:
            raise ClusteringFailed(f"region {k}: no clusters")
        prob_atlases = []
        entries = []
        for c, exemplar in enumerate(sorted(members_by_exemplar)):
            members = members_by_exemplar[exemplar]
            if not members:
                raise ClusteringFailed(f"region {k}: cluster {c} has no members")
            prob = cluster_prob_atlas(segmentations, k, members)
            template = cluster_anat_template(images, members)
            prob_atlases.append(prob)
            entries.append((c, members, prob, template))
        mask = region_mask(prob_atlases)
        regions[k] = RegionDictionary(
            region=k,
            mask=mask,
            entries=[
                RegionalEntry(c, len(members), prob, mask_apply(template, mask))
                for c, members, prob, template in entries
            ],
        )

    return AtlasDictionary(
        regions=regions,
        tissue_mask=tissue_mask(segmentations),
        provenance=dict(provenance or {}),
    )


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_dictionary(dictionary: AtlasDictionary, directory) -> None:
    """Write the dictionary directory layout plus a hashed manifest."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}

    def _put(vol, relpath: str) -> None:
        path = root / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        write_volume(vol, path)
        files[relpath] = _sha256(path)

    _put(dictionary.tissue_mask, TISSUE_MASK_FILE)
    region_meta = {}
    for k in dictionary.region_ids():
        rd = dictionary.regions[k]
        _put(rd.mask, f"region_{k}/mask.vol")
        for entry in rd.entries:
            _put(entry.prob_atlas, f"region_{k}/cluster_{entry.cluster}/prob.vol")
            _put(entry.anat_atlas, f"region_{k}/cluster_{entry.cluster}/anat.vol")
        region_meta[str(k)] = {
            "clusters": len(rd.entries),
            "member_counts": [e.member_count for e in rd.entries],
        }

    manifest = {
        "format": "dpatlas-dictionary",
        "version": 1,
        "num_regions": dictionary.num_regions,
        "dims": list(dictionary.header.dims),
        "spacing": list(dictionary.header.spacing),
        "regions": region_meta,
        "provenance": dictionary.provenance,
        "files": files,
    }
    with open(root / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dictionary(directory) -> AtlasDictionary:
    """Load and verify a saved dictionary; hashes must match the files."""
    root = Path(directory)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FormatError(f"{manifest_path}: manifest missing")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{manifest_path}: {exc}") from exc
    if manifest.get("format") != "dpatlas-dictionary":
        raise FormatError(f"{manifest_path}: not a dictionary manifest")

    for relpath, digest in manifest["files"].items():
        path = root / relpath
        if not path.is_file():
            raise FormatError(f"{path}: referenced by manifest but missing")
        if _sha256(path) != digest:
            raise IntegrityError(f"{path}: content hash does not match manifest")

    tissue = read_volume(root / TISSUE_MASK_FILE)
    regions: dict[int, RegionDictionary] = {}
    for key, meta in manifest["regions"].items():
        k = int(key)
        mask = read_volume(root / f"region_{k}/mask.vol")
        require_same_grid(tissue, mask, "dictionary volumes")
        entries = []
        for c in range(meta["clusters"]):
            prob = read_volume(root / f"region_{k}/cluster_{c}/prob.vol")
            anat = read_volume(root / f"region_{k}/cluster_{c}/anat.vol")
            require_same_grid(tissue, prob, "dictionary volumes")
            require_same_grid(tissue, anat, "dictionary volumes")
            entries.append(
                RegionalEntry(c, int(meta["member_counts"][c]), prob, anat)
            )
        regions[k] = RegionDictionary(k, mask, entries)

    return AtlasDictionary(regions, tissue, dict(manifest.get("provenance", {})))
