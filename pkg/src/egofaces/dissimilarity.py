"""Face-set dissimilarity and co-occurrence constraints.

For a reference face-set R and a target T, the self-similarity median of R
(all distinct pairs inside R) is compared with the median of every R×T
cross score::

    delta(R, T) = |phi_self(R) - phi_cross(R, T)|

The raw value depends on which set is the reference, so the matrix entries
use the symmetrized ``(delta(R, T) + delta(T, R)) / 2``.

Face-sets extracted from the same sequence cannot be the same person. The
constraint matrix flags those pairs, and ``apply_constraints`` either doubles
their dissimilarity (``weight``) or pins it to ``HARD_MAX_SENTINEL``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidMatrix, OrderMismatch
from .matching import Matcher
from .model import Dataset, FaceSet

log = logging.getLogger(__name__)

CONSTRAINT_MODES = ("weight", "hard_max", "off")
# Largest possible Δ (1.0) doubled, so it exceeds any calibrated threshold.
HARD_MAX_SENTINEL = 2.0
SINGLETON_PHI = 1.0


@dataclass(frozen=True)
class ScoreMatrix:
    values: np.ndarray
    kind: str  # "self" or "cross"

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def statistic_values(self) -> np.ndarray:
        """Entries that enter the median: the strict upper triangle for ``self``."""
        if self.kind == "self":
            return self.values[np.triu_indices(self.rows, k=1)]
        return self.values.ravel()


@dataclass(frozen=True)
class SimilaritySummary:
    phi: float
    count: int = 0


@dataclass(frozen=True, eq=False)
class DissimilarityMatrix:
    values: np.ndarray
    set_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise InvalidMatrix(f"dissimilarity matrix must be square, got {values.shape}")
        if len(self.set_ids) != values.shape[0]:
            raise InvalidMatrix(f"{len(self.set_ids)} set ids for order {values.shape[0]}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "set_ids", tuple(self.set_ids))

    @property
    def order(self) -> int:
        return self.values.shape[0]

    def check(self) -> None:
        """Raise InvalidMatrix unless symmetric, non-negative, zero diagonal."""
        v = self.values
        if not np.all(np.isfinite(v)):
            raise InvalidMatrix("matrix has non-finite entries")
        if not np.array_equal(v, v.T):
            i, j = np.argwhere(v != v.T)[0]
            raise InvalidMatrix(f"matrix is not symmetric at ({i}, {j})")
        if (v < 0).any():
            raise InvalidMatrix("matrix has negative entries")
        if np.any(np.diag(v) != 0):
            raise InvalidMatrix("matrix diagonal is not zero")

    def __eq__(self, other):
        if not isinstance(other, DissimilarityMatrix):
            return NotImplemented
        return self.set_ids == other.set_ids and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class ConstraintMatrix:
    flags: np.ndarray
    set_ids: tuple[str, ...]

    def __post_init__(self):
        flags = np.array(self.flags, dtype=np.int8)
        flags.setflags(write=False)
        object.__setattr__(self, "flags", flags)
        object.__setattr__(self, "set_ids", tuple(self.set_ids))

    @property
    def order(self) -> int:
        return self.flags.shape[0]

    def weights(self) -> np.ndarray:
        return self.flags.astype(np.float64) + 1.0

    def __eq__(self, other):
        if not isinstance(other, ConstraintMatrix):
            return NotImplemented
        return self.set_ids == other.set_ids and np.array_equal(self.flags, other.flags)

    __hash__ = None  # type: ignore[assignment]


def constraint_matrix(dataset: Dataset) -> ConstraintMatrix:
    """Flag every pair of face-sets that share a sequence."""
    seq = np.array([fs.sequence_id for fs in dataset.face_sets], dtype=object)
    flags = (seq[:, None] == seq[None, :]).astype(np.int8)
    np.fill_diagonal(flags, 0)
    return ConstraintMatrix(flags, tuple(dataset.set_ids))


def _median(values: np.ndarray) -> float:
    # numpy averages the two central values for even counts
    return float(np.median(values))


def self_score_matrix(R: FaceSet, matcher: Matcher) -> ScoreMatrix:
    block = matcher.block(R.examples, R.examples)
    return ScoreMatrix((block + block.T) / 2.0, "self")


def cross_score_matrix(R: FaceSet, T: FaceSet, matcher: Matcher) -> ScoreMatrix:
    return ScoreMatrix(matcher.block(R.examples, T.examples), "cross")


def self_similarity_summary(R: FaceSet, matcher: Matcher) -> SimilaritySummary:
    """Median similarity between distinct examples of one face-set.

    A singleton has no pairs; it gets ``phi = 1.0`` and a warning is logged.
    """
    if R.length < 2:
        log.warning("face-set %s has a single example; using phi=%.1f", R.set_id, SINGLETON_PHI)
        return SimilaritySummary(SINGLETON_PHI, 0)
    values = self_score_matrix(R, matcher).statistic_values()
    return SimilaritySummary(_median(values), values.size)


def cross_similarity_summary(R: FaceSet, T: FaceSet, matcher: Matcher) -> SimilaritySummary:
    values = cross_score_matrix(R, T, matcher).statistic_values()
    return SimilaritySummary(_median(values), values.size)


def _symmetrized(phi_a: float, phi_b: float, phi_cross: float) -> float:
    return (abs(phi_a - phi_cross) + abs(phi_b - phi_cross)) / 2.0


def directional_dissimilarity(R: FaceSet, T: FaceSet, matcher: Matcher) -> float:
    """Un-symmetrized delta with R as the reference set."""
    phi_r = self_similarity_summary(R, matcher).phi
    phi_t = cross_similarity_summary(R, T, matcher).phi
    return abs(phi_r - phi_t)


def face_set_dissimilarity(R: FaceSet, T: FaceSet, matcher: Matcher) -> float:
    """Symmetrized median-based dissimilarity between two face-sets, in [0, 1]."""
    # canonical order so that swapping the arguments is bit-identical
    a, b = (R, T) if R.set_id <= T.set_id else (T, R)
    phi_a = self_similarity_summary(a, matcher).phi
    phi_b = self_similarity_summary(b, matcher).phi
    phi_c = cross_similarity_summary(a, b, matcher).phi
    return _symmetrized(phi_a, phi_b, phi_c)


def dissimilarity_from_similarity(sim: np.ndarray, groups: Sequence[Sequence[int]],
                                  set_ids: Sequence[str]) -> DissimilarityMatrix:
    """Assemble D from an all-examples similarity matrix.

    ``groups[m]`` lists the row indices of face-set m in ``sim``; ``sim`` must
    be exactly symmetric.
    """
    n = len(groups)
    idx = [np.asarray(g, dtype=np.intp) for g in groups]
    phi = np.empty(n)
    for m, g in enumerate(idx):
        if len(g) < 2:
            log.warning("face-set %s has a single example; using phi=%.1f", set_ids[m], SINGLETON_PHI)
            phi[m] = SINGLETON_PHI
        else:
            block = sim[np.ix_(g, g)]
            phi[m] = _median(block[np.triu_indices(len(g), k=1)])
    values = np.zeros((n, n))
    for m in range(n):
        rows = sim[idx[m]]
        for k in range(m + 1, n):
            phi_c = _median(rows[:, idx[k]])
            values[m, k] = values[k, m] = _symmetrized(phi[m], phi[k], phi_c)
    return DissimilarityMatrix(values, tuple(set_ids))


def build_dissimilarity_matrix(dataset: Dataset, matcher: Matcher,
                               parallelism: int = 1) -> DissimilarityMatrix:
    """Pairwise dissimilarity of every face-set in ``dataset``.

    Every distinct example pair is scored once; ``parallelism`` caps the
    number of concurrent matcher evaluations (0 = one per CPU).
    """
    examples = []
    groups = []
    for fs in dataset.face_sets:
        groups.append(list(range(len(examples), len(examples) + fs.length)))
        examples.extend(fs.examples)
    sim = matcher.similarity_matrix(examples, parallelism=parallelism)
    return dissimilarity_from_similarity(sim, groups, dataset.set_ids)


def apply_constraints(D: DissimilarityMatrix, C: ConstraintMatrix,
                      mode: str = "weight") -> DissimilarityMatrix:
    """Push co-occurring face-sets apart.

    ``weight`` multiplies each entry by ``c + 1``; ``hard_max`` sets
    constrained entries to ``HARD_MAX_SENTINEL``; ``off`` returns D unchanged.
    Unconstrained entries are never modified.
    """
    if D.order != C.order or D.set_ids != C.set_ids:
        raise OrderMismatch(f"D has order {D.order}, C has order {C.order}")
    if mode == "off":
        return D
    constrained = C.flags == 1
    if mode == "weight":
        values = np.where(constrained, D.values * C.weights(), D.values)
    elif mode == "hard_max":
        values = np.where(constrained, HARD_MAX_SENTINEL, D.values)
    else:
        raise ValueError(f"unknown constraint mode {mode!r}; expected one of {CONSTRAINT_MODES}")
    return DissimilarityMatrix(values, D.set_ids)
