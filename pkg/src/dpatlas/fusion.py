"""Majority-vote label fusion across a co-registered population."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyPopulation, GridMismatch
from .volume import LabelVolume, ProbMap, require_same_grid


@dataclass
class MeanSegmentation:
    """Voxelwise winning label plus the fraction of votes it received."""

    volume: LabelVolume
    vote_margin: ProbMap


def majority_vote(segmentations: list[LabelVolume]) -> MeanSegmentation:
    """Fuse segmentations by unweighted per-voxel majority vote.

    Ties go to the lowest label id, which keeps the result independent of
    input order. ``vote_margin`` is winner count / population size.
    """
    if not segmentations:
        raise EmptyPopulation("majority_vote needs at least one segmentation")
    head = segmentations[0]
    for seg in segmentations[1:]:
        require_same_grid(head, seg, "segmentations")
        if seg.num_labels != head.num_labels:
            raise GridMismatch(
                f"num_labels differ: {head.num_labels} vs {seg.num_labels}"
            )

    n = len(segmentations)
    nvox = head.header.num_voxels
    counts = np.zeros((head.num_labels, nvox), dtype=np.uint32)
    cols = np.arange(nvox)
    for seg in segmentations:
        counts[seg.voxels.ravel(order="F"), cols] += 1

    winner = counts.argmax(axis=0)  # argmax picks the lowest label on ties
    margin = counts[winner, cols].astype(np.float32) / np.float32(n)

    volume = LabelVolume(
        head.header,
        winner.astype(np.uint16).reshape(head.header.dims, order="F"),
        head.num_labels,
    )
    margin_map = ProbMap(
        head.header.with_kind("prob-f32"),
        margin.reshape(head.header.dims, order="F"),
    )
    return MeanSegmentation(volume, margin_map)
