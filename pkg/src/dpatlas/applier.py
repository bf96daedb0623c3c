"""Instantiate a personalized whole-volume probabilistic atlas.

For each region the subject's image is restricted to the region's candidate
zone and compared against every cluster's masked anatomical atlas by Pearson
correlation; the best-correlated cluster's probabilistic atlas is adopted.
The adopted regional maps are then normalized: wherever the voxel lies in the
tissue mask, or the regional probabilities oversubscribe (sum > 1), each map
is divided by the sum; background takes the leftover probability.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dictionary import AtlasDictionary, RegionDictionary
from .errors import ClusteringFailed, DegenerateSupport, ZeroVarianceWarning
from .volume import (
    IntensityVolume,
    ProbabilisticAtlas,
    ProbMap,
    mask_apply,
    require_same_grid,
)


@dataclass
class RegionSelection:
    region: int
    chosen_cluster: int
    score: float
    cluster_scores: list[float]


@dataclass
class PersonalAtlas:
    atlas: ProbabilisticAtlas
    selections: dict[int, RegionSelection]
    subject_id: str = "subject"


def pearson_corr(a: IntensityVolume, b: IntensityVolume, support: ProbMap) -> float:
    """Pearson correlation of two images over the voxels where support = 1.

    A constant input over the support has no defined correlation; the score
    is 0 with a warning so a single flat region cannot abort a pipeline run.
    """
    require_same_grid(a, b, "correlation inputs")
    require_same_grid(a, support, "input and support")
    sel = support.voxels != 0
    count = int(sel.sum())
    if count < 2:
        raise DegenerateSupport(f"support selects {count} voxels, need >= 2")
    x = a.voxels[sel].astype(np.float64)
    y = b.voxels[sel].astype(np.float64)
    x -= x.mean()
    y -= y.mean()
    sx = np.sqrt(np.dot(x, x))
    sy = np.sqrt(np.dot(y, y))
    if sx == 0.0 or sy == 0.0:
        warnings.warn(
            "zero variance over the support; correlation set to 0",
            ZeroVarianceWarning,
            stacklevel=2,
        )
        return 0.0
    return float(np.dot(x, y) / (sx * sy))


def select_cluster(subject_img: IntensityVolume, rd: RegionDictionary) -> RegionSelection:
    """Score every cluster of one region against the subject and pick the
    best; ties resolve to the lowest cluster id."""
    if not rd.entries:
        raise ClusteringFailed(f"region {rd.region}: dictionary has no clusters")
    masked = mask_apply(subject_img, rd.mask)
    scores = [
        pearson_corr(entry.anat_atlas, masked, rd.mask) for entry in rd.entries
    ]
    best = int(np.argmax(scores))
    return RegionSelection(
        region=rd.region,
        chosen_cluster=rd.entries[best].cluster,
        score=float(scores[best]),
        cluster_scores=[float(s) for s in scores],
    )


def assemble_atlas(
    selections: dict[int, RegionSelection],
    dictionary: AtlasDictionary,
    subject_id: str = "subject",
) -> PersonalAtlas:
    """Stack the selected regional atlases and normalize to a proper
    whole-volume atlas.

    Normalization divides by the regional sum Z wherever the voxel is inside
    the tissue mask or Z > 1; elsewhere the maps are kept untouched. Z = 0
    inside the mask leaves all labels at 0 with background 1, the only
    probability-conserving completion. Background is 1 minus the label sum,
    clamped at 0 against float underflow.
    """
    header = dictionary.header.with_kind("prob-f32")
    region_ids = dictionary.region_ids()
    stacked = np.zeros((len(region_ids),) + dictionary.header.dims, dtype=np.float64)
    for idx, k in enumerate(region_ids):
        sel = selections[k]
        entry = next(
            e for e in dictionary.regions[k].entries if e.cluster == sel.chosen_cluster
        )
        require_same_grid(dictionary.tissue_mask, entry.prob_atlas, "atlas volumes")
        stacked[idx] = entry.prob_atlas.voxels

    z = stacked.sum(axis=0)
    normalize = (dictionary.tissue_mask.voxels != 0) | (z > 1.0)
    divisor = np.where(normalize & (z > 0.0), z, 1.0)
    stacked /= divisor
    stacked[:, normalize & (z == 0.0)] = 0.0

    # background is derived from the stored f32 label maps, not the f64
    # intermediates, so the stored per-voxel sum is exact to one rounding step
    label_maps = [m.astype(np.float32) for m in stacked]
    label_sum = np.zeros(dictionary.header.dims, dtype=np.float64)
    for m in label_maps:
        label_sum += m
    background = np.clip(1.0 - label_sum, 0.0, 1.0).astype(np.float32)
    maps = [ProbMap(header, background)]
    maps.extend(ProbMap(header, m) for m in label_maps)
    return PersonalAtlas(ProbabilisticAtlas(maps), dict(selections), subject_id)


def personalize(
    subject_img: IntensityVolume,
    dictionary: AtlasDictionary,
    subject_id: str = "subject",
) -> PersonalAtlas:
    """Select the best cluster per region, then assemble and normalize."""
    require_same_grid(subject_img, dictionary.tissue_mask, "subject and dictionary")
    selections = {
        k: select_cluster(subject_img, dictionary.regions[k])
        for k in dictionary.region_ids()
    }
    return assemble_atlas(selections, dictionary, subject_id)
