"""Bottom-up agglomerative clustering with a dissimilarity cut-off.

Leaves are numbered ``0..N-1`` in matrix order; the cluster created by merge
step ``s`` gets id ``N + s`` (the same numbering scipy uses). When several
cluster pairs share the minimum linkage, the pair with the lexicographically
smallest ``(min_id, max_id)`` is merged first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.spatial.distance import cdist

from .dissimilarity import HARD_MAX_SENTINEL, ConstraintMatrix, DissimilarityMatrix
from .errors import InvalidMatrix, MissingDescriptor
from .model import Dataset

LINKAGES = ("single", "complete", "average")


@dataclass(frozen=True)
class MergeStep:
    step_index: int
    left: int
    right: int
    merged_id: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    steps: tuple[MergeStep, ...]
    leaf_ids: tuple[str, ...]

    def heights(self) -> list[float]:
        return [s.height for s in self.steps]

    def to_linkage_matrix(self) -> np.ndarray:
        """scipy-style ``Z`` matrix (left, right, height, size) per step."""
        return np.array([[s.left, s.right, s.height, s.size] for s in self.steps],
                        dtype=np.float64).reshape(-1, 4)


@dataclass(frozen=True)
class ClusterAssignment:
    labels: Mapping[str, int]
    num_clusters: int

    def __post_init__(self):
        object.__setattr__(self, "labels", dict(self.labels))

    def groups(self) -> list[list[str]]:
        out: list[list[str]] = [[] for _ in range(self.num_clusters)]
        for item, label in self.labels.items():
            out[label].append(item)
        return out


def assignment_from_groups(groups, leaf_ids) -> ClusterAssignment:
    """Label clusters 0..k-1 in order of their smallest leaf index."""
    ordered = sorted((sorted(g) for g in groups), key=lambda g: g[0])
    labels = {}
    for label, g in enumerate(ordered):
        for leaf in g:
            labels[leaf_ids[leaf]] = label
    return ClusterAssignment(labels, len(ordered))


def _check_matrix(values: np.ndarray) -> None:
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise InvalidMatrix(f"matrix must be square, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InvalidMatrix("matrix has non-finite entries")
    if not np.array_equal(values, values.T):
        raise InvalidMatrix("matrix is not symmetric")
    if (values < 0).any():
        raise InvalidMatrix("matrix has negative entries")


def agglomerative_cluster(D: DissimilarityMatrix | np.ndarray, linkage: str = "average",
                          theta: float = np.inf,
                          cannot_link: ConstraintMatrix | np.ndarray | None = None,
                          ) -> tuple[Dendrogram, ClusterAssignment]:
    """Greedy agglomerative clustering.

    The full dendrogram (``N - 1`` steps) is always built. The assignment is
    the state of the clustering at the first step whose linkage exceeds
    ``theta``, which for these linkages is the same as cutting the
    dendrogram at ``theta``.

    ``cannot_link`` (an N×N 0/1 matrix) makes any two clusters holding a
    flagged pair at least ``HARD_MAX_SENTINEL`` apart, so they are never
    merged below that height whatever the linkage.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}; expected one of {LINKAGES}")
    if theta < 0:
        raise ValueError("theta must be >= 0")
    if isinstance(D, DissimilarityMatrix):
        values, leaf_ids = np.array(D.values, dtype=np.float64), D.set_ids
    else:
        values = np.array(D, dtype=np.float64)
        leaf_ids = tuple(str(i) for i in range(values.shape[0]))
    _check_matrix(values)
    n = values.shape[0]
    if n == 0:
        raise InvalidMatrix("matrix has order 0")

    size = 2 * n - 1
    link = np.full((size, size), np.inf)
    link[:n, :n] = values
    sums = np.zeros((size, size)) if linkage == "average" else None
    if sums is not None:
        sums[:n, :n] = values
    blocked = np.zeros((size, size), dtype=bool)
    if cannot_link is not None:
        flags = cannot_link.flags if isinstance(cannot_link, ConstraintMatrix) else np.asarray(cannot_link)
        if flags.shape != (n, n):
            raise InvalidMatrix(f"cannot_link has shape {flags.shape}, expected {(n, n)}")
        blocked[:n, :n] = flags.astype(bool) | flags.astype(bool).T
    # effective linkage between active clusters; inf elsewhere
    eff = np.where(blocked, np.maximum(link, HARD_MAX_SENTINEL), link)
    np.fill_diagonal(eff, np.inf)
    counts = np.zeros(size, dtype=np.int64)
    counts[:n] = 1
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    active = np.zeros(size, dtype=bool)
    active[:n] = True

    steps = []
    stopped_groups = None
    for step in range(n - 1):
        # eff is symmetric, so the first row-major minimum is the pair with
        # the smallest (min_id, max_id)
        i, j = divmod(int(np.argmin(eff)), size)
        height = float(eff[i, j])
        if stopped_groups is None and height > theta:
            stopped_groups = [list(m) for m in members.values()]

        new = n + step
        steps.append(MergeStep(step, i, j, new, height, len(members[i]) + len(members[j])))
        members[new] = members.pop(i) + members.pop(j)
        counts[new] = counts[i] + counts[j]
        active[[i, j]] = False
        others = np.flatnonzero(active)
        active[new] = True
        if linkage == "single":
            row = np.minimum(link[i, others], link[j, others])
        elif linkage == "complete":
            row = np.maximum(link[i, others], link[j, others])
        else:
            s = sums[i, others] + sums[j, others]
            sums[new, others] = sums[others, new] = s
            row = s / (counts[new] * counts[others])
        link[new, others] = link[others, new] = row
        b = blocked[i, others] | blocked[j, others]
        blocked[new, others] = blocked[others, new] = b
        eff_row = np.where(b, np.maximum(row, HARD_MAX_SENTINEL), row)
        eff[[i, j], :] = np.inf
        eff[:, [i, j]] = np.inf
        eff[new, others] = eff[others, new] = eff_row

    if stopped_groups is None:
        stopped_groups = [list(m) for m in members.values()]
    dendrogram = Dendrogram(tuple(steps), tuple(leaf_ids))
    return dendrogram, assignment_from_groups(stopped_groups, leaf_ids)


def cut_dendrogram(dendrogram: Dendrogram, theta: float) -> ClusterAssignment:
    """Apply every merge whose height is at most ``theta``."""
    n = len(dendrogram.leaf_ids)
    parent = list(range(2 * n - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for s in dendrogram.steps:
        if s.height <= theta:
            parent[find(s.left)] = s.merged_id
            parent[find(s.right)] = s.merged_id
    groups: dict[int, list[int]] = {}
    for leaf in range(n):
        groups.setdefault(find(leaf), []).append(leaf)
    return assignment_from_groups(groups.values(), dendrogram.leaf_ids)


def _descriptors(dataset: Dataset) -> list[np.ndarray]:
    out = []
    for ex in dataset.examples():
        if ex.descriptor is None:
            raise MissingDescriptor(ex.example_id)
        out.append(ex.descriptor)
    return out


def mean_descriptor_matrix(dataset: Dataset) -> DissimilarityMatrix:
    """Euclidean distance between face-set mean descriptors.

    Baseline representation: one averaged descriptor per face-set. Values are
    unbounded, so it needs its own threshold.
    """
    _descriptors(dataset)
    means = np.vstack([np.mean([ex.descriptor for ex in fs.examples], axis=0)
                       for fs in dataset.face_sets])
    values = cdist(means, means, "euclidean")
    values = (values + values.T) / 2.0
    np.fill_diagonal(values, 0.0)
    return DissimilarityMatrix(values, tuple(dataset.set_ids))


def example_distance_matrix(dataset: Dataset) -> DissimilarityMatrix:
    """Euclidean distance between individual face-example descriptors.

    Baseline that ignores face-sets altogether and clusters single faces.
    """
    X = np.vstack(_descriptors(dataset))
    values = cdist(X, X, "euclidean")
    values = (values + values.T) / 2.0
    np.fill_diagonal(values, 0.0)
    ids = tuple(ex.example_id for ex in dataset.examples())
    return DissimilarityMatrix(values, ids)
