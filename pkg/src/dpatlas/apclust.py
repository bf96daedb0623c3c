"""Exemplar clustering of subjects by message passing over vertex similarity.

The similarity between two subjects for a region is the negated mean of
squared distances between corresponding boundary vertices. The clusterer is
the classic responsibility/availability scheme: every update is computed from
the previous full iterate, then damped, so results are deterministic and
independent of any internal parallelism.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ClusteringFailed, CorrespondenceError, EmptyPopulation, FormatError
from .shape import VertexSet


@dataclass
class ApConfig:
    damping: float = 0.9
    max_iterations: int = 1000
    convergence_window: int = 50
    preference: float | str = "median-similarity"

    def __post_init__(self):
        if not 0.5 <= self.damping < 1.0:
            raise ValueError(f"damping must be in [0.5, 1), got {self.damping}")
        if self.max_iterations < 1 or self.convergence_window < 1:
            raise ValueError("iteration counts must be positive")
        if isinstance(self.preference, str) and self.preference != "median-similarity":
            raise ValueError(f"unknown preference mode {self.preference!r}")


@dataclass
class SimilarityMatrix:
    """Dense n x n similarities; off-diagonals <= 0, diagonal = preferences."""

    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError("similarity matrix must be square")
        if not np.isfinite(s).all():
            raise ValueError("similarity matrix must be finite")
        off = s[~np.eye(s.shape[0], dtype=bool)]
        if off.size and off.max() > 0:
            raise ValueError("off-diagonal similarities must be <= 0")
        if not np.allclose(s, s.T, atol=1e-9):
            raise ValueError("similarity matrix must be symmetric within 1e-9")
        self.s = s

    @property
    def n(self) -> int:
        return self.s.shape[0]


@dataclass
class ClusteringResult:
    exemplars: list[int]
    assignment: np.ndarray  # per subject: the exemplar's subject index
    num_clusters: int
    iterations_run: int
    converged: bool
    region: int | None = None

    def members(self) -> dict[int, list[int]]:
        """Map each exemplar to the sorted list of its member subjects."""
        out: dict[int, list[int]] = {e: [] for e in self.exemplars}
        for i, e in enumerate(self.assignment):
            out[int(e)].append(i)
        return out


def vertex_similarity(vi: VertexSet, vj: VertexSet) -> float:
    """Negated mean squared distance between corresponding vertices.

    0 for identical sets, strictly negative otherwise.
    """
    if vi.region != vj.region:
        raise CorrespondenceError(
            f"vertex sets from different regions: {vi.region} vs {vj.region}"
        )
    if len(vi) != len(vj):
        raise CorrespondenceError(
            f"vertex cardinality mismatch: {len(vi)} vs {len(vj)}"
        )
    diff = vi.points - vj.points
    return float(-np.mean(np.einsum("ij,ij->i", diff, diff)))


def build_similarity_matrix(
    vertex_sets: list[VertexSet], cfg: ApConfig | None = None
) -> SimilarityMatrix:
    """Pairwise vertex similarities with the preference on the diagonal.

    The default preference is the median of the off-diagonal similarities;
    a scalar in ``cfg.preference`` overrides it.
    """
    cfg = cfg or ApConfig()
    n = len(vertex_sets)
    if n < 2:
        raise EmptyPopulation(f"need at least 2 subjects to cluster, got {n}")
    for vs in vertex_sets[1:]:
        if vs.region != vertex_sets[0].region or len(vs) != len(vertex_sets[0]):
            vertex_similarity(vertex_sets[0], vs)  # raises with details
    pts = np.stack([vs.points for vs in vertex_sets])
    diff = pts[:, None, :, :] - pts[None, :, :, :]
    s = -np.mean(np.sum(diff * diff, axis=3), axis=2)
    off = s[~np.eye(n, dtype=bool)]
    if cfg.preference == "median-similarity":
        pref = float(np.median(off))
    else:
        pref = float(cfg.preference)
    np.fill_diagonal(s, pref)
    return SimilarityMatrix(s)


def affinity_propagation(sim: SimilarityMatrix, cfg: ApConfig | None = None) -> ClusteringResult:
    """Run damped responsibility/availability updates until the exemplar set
    is stable for ``convergence_window`` iterations or ``max_iterations``.

    Exemplars are the points whose self-availability plus self-responsibility
    is positive. If that set is empty once the messages settle (degenerate
    ties, or preferences so penalized that no point can afford to self-elect),
    the single point with the largest self-evidence is used, which matches the
    one-cluster optimum in those regimes.
    """
    cfg = cfg or ApConfig()
    S = sim.s
    n = sim.n
    if n == 1:
        return ClusteringResult([0], np.zeros(1, dtype=np.int64), 1, 0, True)

    lam = cfg.damping
    A = np.zeros((n, n))
    R = np.zeros((n, n))
    rows = np.arange(n)
    prev_exemplar = np.zeros(n, dtype=bool)
    stable = 0
    converged = False
    iterations = 0

    for iterations in range(1, cfg.max_iterations + 1):
        # responsibilities: r(i,k) = s(i,k) - max_{k' != k} [a(i,k') + s(i,k')]
        AS = A + S
        best = AS.argmax(axis=1)
        first = AS[rows, best]
        AS[rows, best] = -np.inf
        second = AS.max(axis=1)
        Rnew = S - first[:, None]
        Rnew[rows, best] = S[rows, best] - second
        R = lam * R + (1.0 - lam) * Rnew

        # availabilities from the freshly damped responsibilities
        Rp = np.maximum(R, 0.0)
        np.fill_diagonal(Rp, R.diagonal())
        col = Rp.sum(axis=0)
        Anew = col[None, :] - Rp
        diag = Anew.diagonal().copy()
        Anew = np.minimum(Anew, 0.0)
        np.fill_diagonal(Anew, diag)
        A = lam * A + (1.0 - lam) * Anew

        if not (np.isfinite(R).all() and np.isfinite(A).all()):
            raise ClusteringFailed(
                f"messages diverged to non-finite values at iteration {iterations}"
            )

        exemplar = (A.diagonal() + R.diagonal()) > 0
        if np.array_equal(exemplar, prev_exemplar):
            stable += 1
            if stable >= cfg.convergence_window:
                converged = True
                break
        else:
            stable = 0
        prev_exemplar = exemplar

    evidence = A.diagonal() + R.diagonal()
    exemplars = np.flatnonzero(evidence > 0)
    if exemplars.size == 0:
        fallback = int(np.argmax(evidence))
        warnings.warn(
            "no point self-elected; falling back to the single best exemplar",
            stacklevel=2,
        )
        exemplars = np.array([fallback])

    # assign every point to the exemplar with the highest similarity;
    # argmax keeps the lowest exemplar index on ties
    assignment = exemplars[np.argmax(S[:, exemplars], axis=1)]
    assignment[exemplars] = exemplars
    return ClusteringResult(
        exemplars=[int(e) for e in exemplars],
        assignment=assignment.astype(np.int64),
        num_clusters=int(exemplars.size),
        iterations_run=iterations,
        converged=converged,
    )


def cluster_region(vertex_sets: list[VertexSet], cfg: ApConfig | None = None) -> ClusteringResult:
    """Build the similarity matrix for one region's vertex sets and cluster it."""
    cfg = cfg or ApConfig()
    sim = build_similarity_matrix(vertex_sets, cfg)
    result = affinity_propagation(sim, cfg)
    result.region = vertex_sets[0].region
    return result


def single_cluster_result(n: int, region: int | None = None) -> ClusteringResult:
    """Degenerate clustering placing every subject in one cluster.

    This reproduces the traditional pooled group atlas through the same
    dictionary-building path.
    """
    if n < 1:
        raise EmptyPopulation("need at least one subject")
    return ClusteringResult([0], np.zeros(n, dtype=np.int64), 1, 0, True, region)


def save_clustering(result: ClusteringResult, path) -> None:
    """Text form: ``region k clusters C converged {0|1}`` then ``i exemplar``."""
    region = result.region if result.region is not None else 0
    lines = [
        f"region {region} clusters {result.num_clusters} "
        f"converged {int(result.converged)}"
    ]
    for i, e in enumerate(result.assignment):
        lines.append(f"{i} {int(e)}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_clustering(path) -> ClusteringResult:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) != 6 or head[0] != "region" or head[2] != "clusters":
        raise FormatError(f"{path}: bad clustering header {lines[0]!r}")
    region, num_clusters, converged = int(head[1]), int(head[3]), bool(int(head[5]))
    assignment = np.array([int(ln.split()[1]) for ln in lines[1:]], dtype=np.int64)
    exemplars = sorted(set(int(e) for e in assignment))
    if len(exemplars) != num_clusters:
        raise FormatError(f"{path}: cluster count disagrees with assignments")
    return ClusteringResult(exemplars, assignment, num_clusters, 0, converged, region)
