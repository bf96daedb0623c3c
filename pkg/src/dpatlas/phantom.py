"""Synthetic population generator with planted shape phenotypes.

Each region is an ellipsoid on a fixed lattice. A phenotype is a fixed,
documented perturbation of the region's center and semi-axes; distinct
phenotype centers sit at least ``PHENOTYPE_SEPARATION`` voxels apart, so the
separation-to-noise ratio is known by construction. Every subject draws one
phenotype (seeded, uniform, shared across its regions) plus per-region
Gaussian jitter, and an intensity image with one mean level per region plus
Gaussian noise. Per-subject random streams are derived from
``(seed, subject_index)``, so any subject is reproducible in isolation.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, LayoutError, StratificationWarning
from .volio import read_volume, write_volume
from .volume import IntensityVolume, LabelVolume, VolumeHeader

PHENOTYPE_SEPARATION = 2.0  # voxels between distinct phenotype centers
INTENSITY_STEP = 1.0        # mean-intensity gap between adjacent labels

# unit center-offset directions; pairwise distances are all >= 1
_PHENOTYPE_DIRECTIONS = np.array(
    [
        (0.0, 0.0, 0.0),
        (1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0),
        (0.0, 0.0, 1.0),
        (-1.0, 0.0, 0.0),
        (0.0, -1.0, 0.0),
        (0.0, 0.0, -1.0),
    ]
)
# per-phenotype semi-axis tweaks so shape, not just position, differs
_PHENOTYPE_AXIS_DELTAS = 0.3 * np.array(
    [
        (0.0, 0.0, 0.0),
        (1.0, -1.0, 0.0),
        (-1.0, 0.0, 1.0),
        (0.0, 1.0, -1.0),
        (1.0, 0.0, -1.0),
        (-1.0, 1.0, 0.0),
        (0.0, -1.0, 1.0),
    ]
)

TRUTH_NAME = "truth.json"


@dataclass
class PhantomConfig:
    dims: tuple[int, int, int] = (48, 48, 48)
    num_regions: int = 8
    phenotypes_per_region: int = 3
    n_train: int = 60
    n_test: int = 20
    shape_noise: float = 0.4
    intensity_noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.num_regions < 2:
            raise ValueError("num_regions must be >= 2")
        if self.phenotypes_per_region < 1:
            raise ValueError("phenotypes_per_region must be >= 1")
        if self.shape_noise < 0 or self.intensity_noise < 0:
            raise ValueError("noise levels must be >= 0")
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("need at least one training subject")

    @property
    def n_subjects(self) -> int:
        return self.n_train + self.n_test

    def to_json_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "num_regions": self.num_regions,
            "phenotypes_per_region": self.phenotypes_per_region,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "shape_noise": self.shape_noise,
            "intensity_noise": self.intensity_noise,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PhantomConfig":
        return cls(
            dims=tuple(d["dims"]),
            num_regions=d["num_regions"],
            phenotypes_per_region=d["phenotypes_per_region"],
            n_train=d["n_train"],
            n_test=d["n_test"],
            shape_noise=d["shape_noise"],
            intensity_noise=d["intensity_noise"],
            seed=d["seed"],
        )


@dataclass
class PhantomSubject:
    subject_id: int
    seg: LabelVolume
    img: IntensityVolume
    planted_phenotype: dict[int, int]


@dataclass
class PhenotypePopulation:
    config: PhantomConfig
    subjects: list[PhantomSubject] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.subjects)


def _base_layout(cfg: PhantomConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Region base centers on a cubic lattice, base semi-axes, and the
    per-axis half-cell sizes each region must stay inside."""
    g = int(np.ceil(cfg.num_regions ** (1.0 / 3.0)))
    cells = [
        (i, j, l)
        for l in range(g)
        for j in range(g)
        for i in range(g)
    ][: cfg.num_regions]
    dims = np.asarray(cfg.dims, dtype=np.float64)
    half_cell = dims / g / 2.0
    centers = np.array(
        [((np.asarray(c, dtype=np.float64) + 0.5) / g) * dims for c in cells]
    )
    # semi-axes as fixed fractions of the cell, deterministically varied per
    # region so the base shapes are not all congruent
    fractions = np.array(
        [
            (
                0.350 + 0.025 * (k % 2),
                0.300 + 0.025 * ((k // 2) % 2),
                0.325 + 0.025 * ((k // 4) % 2),
            )
            for k in range(cfg.num_regions)
        ]
    )
    return centers, fractions * half_cell, half_cell


def _validate_layout(cfg: PhantomConfig, axes: np.ndarray, half_cell: np.ndarray) -> None:
    if cfg.phenotypes_per_region > len(_PHENOTYPE_DIRECTIONS):
        raise LayoutError(
            f"at most {len(_PHENOTYPE_DIRECTIONS)} phenotypes per region supported"
        )
    if 5.0 * cfg.shape_noise > PHENOTYPE_SEPARATION:
        raise LayoutError(
            f"shape_noise {cfg.shape_noise} breaks the 5-sigma separation "
            f"guarantee (separation {PHENOTYPE_SEPARATION})"
        )
    if 10.0 * cfg.intensity_noise > INTENSITY_STEP:
        raise LayoutError(
            f"intensity_noise {cfg.intensity_noise} exceeds a tenth of the "
            f"inter-region level step {INTENSITY_STEP}"
        )
    if axes.min() < 1.5:
        raise LayoutError(
            f"grid {cfg.dims} too small for {cfg.num_regions} regions: "
            f"semi-axis would shrink to {axes.min():.2f} voxels"
        )
    # worst-case reach per axis: semi-axis + phenotype shift + axis tweak +
    # 4-sigma jitter + 1 voxel; must stay inside the region's own lattice cell
    reach = (
        axes.max(axis=0)
        + PHENOTYPE_SEPARATION
        + _PHENOTYPE_AXIS_DELTAS.max()
        + 4.0 * cfg.shape_noise
        + 1.0
    )
    if (reach > half_cell).any():
        raise LayoutError(
            f"regions would overlap or leave the grid: reach {reach.round(1)} "
            f"voxels exceeds the {half_cell.round(1)}-voxel lattice half-cell"
        )


def _voxelize_subject(
    cfg: PhantomConfig,
    centers: np.ndarray,
    axes: np.ndarray,
    phenotype: int,
    rng: np.random.Generator,
) -> tuple[LabelVolume, IntensityVolume]:
    header = VolumeHeader(cfg.dims, (1.0, 1.0, 1.0), "label-u16")
    grid = np.stack(
        np.meshgrid(*(np.arange(d, dtype=np.float64) for d in cfg.dims), indexing="ij"),
        axis=-1,
    )
    seg = np.zeros(cfg.dims, dtype=np.uint16)
    offset = PHENOTYPE_SEPARATION * _PHENOTYPE_DIRECTIONS[phenotype]
    delta = _PHENOTYPE_AXIS_DELTAS[phenotype]
    for k in range(cfg.num_regions):
        center = centers[k] + offset + rng.normal(0.0, cfg.shape_noise, 3)
        semi = np.maximum(
            axes[k] + delta + rng.normal(0.0, cfg.shape_noise / 2.0, 3), 1.0
        )
        inside = (((grid - center) / semi) ** 2).sum(axis=-1) <= 1.0
        seg[inside] = k + 1

    levels = INTENSITY_STEP * np.arange(cfg.num_regions + 1, dtype=np.float64)
    img = levels[seg]
    if cfg.intensity_noise > 0:
        img = img + rng.normal(0.0, cfg.intensity_noise, cfg.dims)
    label_vol = LabelVolume(header, seg, cfg.num_regions + 1)
    img_vol = IntensityVolume(
        header.with_kind("intensity-f32"), img.astype(np.float32)
    )
    return label_vol, img_vol


def generate_population(cfg: PhantomConfig) -> PhenotypePopulation:
    """Generate the full (train + test) cohort; deterministic given the seed."""
    centers, axes, half_cell = _base_layout(cfg)
    _validate_layout(cfg, axes, half_cell)
    subjects = []
    for i in range(cfg.n_subjects):
        rng = np.random.default_rng([cfg.seed, i])
        phenotype = int(rng.integers(cfg.phenotypes_per_region))
        seg, img = _voxelize_subject(cfg, centers, axes, phenotype, rng)
        planted = {k: phenotype for k in range(1, cfg.num_regions + 1)}
        subjects.append(PhantomSubject(i, seg, img, planted))
    return PhenotypePopulation(cfg, subjects)


def split_population(
    pop: PhenotypePopulation, train_fraction: float, seed: int
) -> tuple[PhenotypePopulation, PhenotypePopulation]:
    """Seeded stratified split preserving phenotype proportions.

    Strata are the planted phenotype assignments; a stratum with fewer than
    two members triggers a warning and a simple (unstratified) split. The
    test side always keeps at least one subject.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(pop.subjects)
    if n < 2:
        raise ValueError("cannot split fewer than 2 subjects")
    rng = np.random.default_rng(seed)

    strata: dict[tuple, list[int]] = {}
    for idx, subj in enumerate(pop.subjects):
        key = tuple(sorted(subj.planted_phenotype.items()))
        strata.setdefault(key, []).append(idx)

    if any(len(v) < 2 for v in strata.values()):
        warnings.warn(
            "a phenotype stratum has fewer than 2 members; simple split",
            StratificationWarning,
            stacklevel=2,
        )
        strata = {(): list(range(n))}

    n_train_target = int(round(train_fraction * n))
    n_train_target = min(max(n_train_target, 1), n - 1)

    keys = sorted(strata)
    quotas = {}
    remainders = []
    for key in keys:
        exact = train_fraction * len(strata[key])
        quotas[key] = int(np.floor(exact))
        remainders.append((exact - np.floor(exact), key))
    short = n_train_target - sum(quotas.values())
    for _, key in sorted(remainders, key=lambda t: (-t[0], t[1]))[:max(short, 0)]:
        quotas[key] += 1

    train_idx: list[int] = []
    test_idx: list[int] = []
    for key in keys:
        members = list(strata[key])
        rng.shuffle(members)
        quota = min(quotas[key], len(members))
        train_idx.extend(members[:quota])
        test_idx.extend(members[quota:])

    if not test_idx:
        test_idx.append(train_idx.pop())
    if not train_idx:
        train_idx.append(test_idx.pop())
    train_idx.sort()
    test_idx.sort()
    train = PhenotypePopulation(pop.config, [pop.subjects[i] for i in train_idx])
    test = PhenotypePopulation(pop.config, [pop.subjects[i] for i in test_idx])
    return train, test


def partition_purity(assignment, truth) -> float:
    """Fraction of subjects whose cluster's dominant planted phenotype is
    their own: sum over clusters of the majority count, divided by n."""
    assignment = np.asarray(assignment)
    truth = np.asarray(truth)
    total = 0
    for c in np.unique(assignment):
        _, counts = np.unique(truth[assignment == c], return_counts=True)
        total += int(counts.max())
    return total / assignment.size


def save_population(
    train: PhenotypePopulation, test: PhenotypePopulation, directory
) -> None:
    """Write ``subject_<i>/{seg.vol,img.vol}`` plus ``truth.json``."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for role, pop in (("train", train), ("test", test)):
        for subj in pop.subjects:
            sub_dir = root / f"subject_{subj.subject_id:04d}"
            sub_dir.mkdir(parents=True, exist_ok=True)
            write_volume(subj.seg, sub_dir / "seg.vol")
            write_volume(subj.img, sub_dir / "img.vol")
            records.append(
                {
                    "id": subj.subject_id,
                    "role": role,
                    "phenotypes": {str(k): v for k, v in subj.planted_phenotype.items()},
                }
            )
    records.sort(key=lambda r: r["id"])
    truth = {
        "config": train.config.to_json_dict(),
        "phenotype_separation": PHENOTYPE_SEPARATION,
        "subjects": records,
    }
    with open(root / TRUTH_NAME, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_population(directory) -> tuple[PhenotypePopulation, PhenotypePopulation]:
    """Load a saved population; returns (train, test)."""
    root = Path(directory)
    truth_path = root / TRUTH_NAME
    if not truth_path.is_file():
        raise FormatError(f"{truth_path}: missing")
    with open(truth_path, "r", encoding="utf-8") as fh:
        truth = json.load(fh)
    cfg = PhantomConfig.from_json_dict(truth["config"])
    train = PhenotypePopulation(cfg)
    test = PhenotypePopulation(cfg)
    for rec in truth["subjects"]:
        sub_dir = root / f"subject_{rec['id']:04d}"
        seg = read_volume(sub_dir / "seg.vol")
        img = read_volume(sub_dir / "img.vol")
        subj = PhantomSubject(
            rec["id"],
            seg,
            img,
            {int(k): v for k, v in rec["phenotypes"].items()},
        )
        (train if rec["role"] == "train" else test).subjects.append(subj)
    return train, test
