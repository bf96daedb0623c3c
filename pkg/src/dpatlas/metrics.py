"""Evaluation metrics: Jensen-Shannon divergence between spatial
distributions, max-probability segmentation, Dice overlap, and a two-sided
Wilcoxon signed-rank test (exact for small samples).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyRegionWarning,
    InsufficientPairs,
    InvalidDistribution,
)
from .volume import LabelVolume, ProbabilisticAtlas, ProbMap, require_same_grid

EXACT_WILCOXON_LIMIT = 25


@dataclass
class EvalReport:
    """Per-region metric values for one subject under one atlas variant."""

    subject: str
    variant: str
    js: dict[int, float] = field(default_factory=dict)
    dice: dict[int, float] = field(default_factory=dict)

    @property
    def mean_js(self) -> float:
        return float(np.mean(list(self.js.values())))

    @property
    def mean_dice(self) -> float:
        return float(np.mean(list(self.dice.values())))


@dataclass
class WilcoxonResult:
    n: int
    statistic: float
    p_value: float
    alpha: float
    significant: bool

    def to_line(self) -> str:
        return (
            f"n={self.n},W={self.statistic:g},p={self.p_value:.6g},"
            f"significant={int(self.significant)}"
        )


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in bits; 0 for equal distributions, 1 for
    disjoint supports. Inputs are renormalized to sum to 1."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise InvalidDistribution(f"support sizes differ: {p.size} vs {q.size}")
    if p.min() < 0 or q.min() < 0:
        raise InvalidDistribution("distributions must be nonnegative")
    ps, qs = p.sum(), q.sum()
    if ps <= 0 or qs <= 0:
        raise InvalidDistribution("distributions must have positive total mass")
    p = p / ps
    q = q / qs
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_pm = np.where(p > 0, p * np.log2(p / m), 0.0).sum()
        kl_qm = np.where(q > 0, q * np.log2(q / m), 0.0).sum()
    return float(0.5 * kl_pm + 0.5 * kl_qm)


def region_js(atlas_label_map: ProbMap, target_seg: LabelVolume, region: int) -> float:
    """JS divergence between an atlas label map and the binary indicator of
    the region in a target segmentation, each normalized as a spatial
    distribution over voxels. Zero mass on either side scores 1.0."""
    require_same_grid(atlas_label_map, target_seg, "atlas map and target")
    atlas_mass = atlas_label_map.voxels.astype(np.float64).ravel()
    target_mass = (target_seg.voxels == region).astype(np.float64).ravel()
    if atlas_mass.sum() <= 0 or target_mass.sum() <= 0:
        warnings.warn(
            f"region {region}: zero spatial mass; divergence set to 1.0",
            EmptyRegionWarning,
            stacklevel=2,
        )
        return 1.0
    return js_divergence(atlas_mass, target_mass)


def naive_segmentation(atlas: ProbabilisticAtlas) -> LabelVolume:
    """Per-voxel argmax over the label maps, background competing; ties go to
    the lowest label id."""
    stack = np.stack([m.voxels for m in atlas.maps])
    winner = stack.argmax(axis=0).astype(np.uint16)
    return LabelVolume(
        atlas.header.with_kind("label-u16"), winner, atlas.num_labels
    )


def dice(seg_a: LabelVolume, seg_b: LabelVolume, region: int) -> float:
    """Dice overlap 2|A^B| / (|A|+|B|) of the voxels labeled ``region``.

    Both sets empty scores 1.0 (nothing to miss), with a warning.
    """
    require_same_grid(seg_a, seg_b, "segmentations")
    a = seg_a.voxels == region
    b = seg_b.voxels == region
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        warnings.warn(
            f"region {region} empty in both segmentations; Dice set to 1.0",
            EmptyRegionWarning,
            stacklevel=2,
        )
        return 1.0
    return float(2.0 * np.count_nonzero(a & b) / denom)


def evaluate_atlas(
    atlas: ProbabilisticAtlas,
    target: LabelVolume,
    subject: str = "subject",
    variant: str = "atlas",
) -> EvalReport:
    """Per-region JS against the target plus per-region Dice of the naive
    segmentation, for every non-background region."""
    naive = naive_segmentation(atlas)
    report = EvalReport(subject=subject, variant=variant)
    for k in range(1, atlas.num_labels):
        report.js[k] = region_js(atlas.maps[k], target, k)
        report.dice[k] = dice(naive, target, k)
    return report


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_cdf_at(doubled_ranks: np.ndarray, doubled_w: int) -> float:
    """P(W+ <= w) by enumerating sign patterns via the rank-sum polynomial."""
    total = int(doubled_ranks.sum())
    ways = np.zeros(total + 1, dtype=np.float64)
    ways[0] = 1.0
    for r in doubled_ranks:
        r = int(r)
        ways[r:] += ways[:total + 1 - r].copy()
    return float(ways[: doubled_w + 1].sum() / 2.0 ** len(doubled_ranks))


def wilcoxon_signed_rank(x, y, alpha: float = 0.01) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped. |differences| are ranked with average ranks
    for ties; the statistic is the smaller signed-rank sum. The p-value is
    exact (full sign-pattern enumeration, conditional on the observed ranks)
    up to 25 pairs, and a tie- and continuity-corrected normal approximation
    beyond that.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("paired samples must be equal-length 1D arrays")
    d = x - y
    d = d[d != 0.0]
    n = d.size
    if n < 6:
        raise InsufficientPairs(
            f"{n} nonzero pairs after dropping zero differences, need >= 6"
        )
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    total = float(ranks.sum())
    w = min(w_plus, total - w_plus)

    if n <= EXACT_WILCOXON_LIMIT:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        p = min(1.0, 2.0 * _exact_cdf_at(doubled, int(round(2.0 * w))))
    else:
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        _, counts = np.unique(ranks, return_counts=True)
        var -= (counts.astype(np.float64) ** 3 - counts).sum() / 48.0
        z = (w - mean + 0.5) / math.sqrt(var)
        p = min(1.0, float(math.erfc(-z / math.sqrt(2.0))))

    return WilcoxonResult(
        n=n, statistic=w, p_value=p, alpha=alpha, significant=p < alpha
    )
