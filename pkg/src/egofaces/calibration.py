"""Cut-off threshold estimation from labelled face-set pairs.

The threshold is the median dissimilarity over pairs of *different* face-sets
of the *same* person. Pairs of different people are kept as a diagnostic
(their median should sit well above the threshold).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .dissimilarity import (
    DissimilarityMatrix,
    _symmetrized,
    build_dissimilarity_matrix,
    cross_similarity_summary,
    self_similarity_summary,
)
from .errors import CalibrationLeakage, NoPositiveSamples
from .matching import Matcher
from .model import Dataset, FaceSet

TRAIN_SPLIT = "train"


@dataclass(frozen=True)
class CalibrationSample:
    set_a: FaceSet
    set_b: FaceSet
    same_person: bool

    def __post_init__(self):
        if self.set_a.set_id == self.set_b.set_id:
            raise ValueError(f"calibration pair uses face-set {self.set_a.set_id!r} twice")


@dataclass(frozen=True)
class CalibrationResult:
    theta: float
    delta_s_values: tuple[float, ...]
    delta_d_values: tuple[float, ...] = field(default_factory=tuple)
    median_d: float = math.nan


def _median(values: Sequence[float]) -> float:
    return float(np.median(np.sort(np.asarray(values, dtype=np.float64))))


def result_from_values(delta_s: Iterable[float], delta_d: Iterable[float] = ()) -> CalibrationResult:
    delta_s = tuple(float(v) for v in delta_s)
    delta_d = tuple(float(v) for v in delta_d)
    if not delta_s:
        raise NoPositiveSamples("calibration needs at least one same-person pair")
    median_d = _median(delta_d) if delta_d else math.nan
    return CalibrationResult(_median(delta_s), delta_s, delta_d, median_d)


def calibrate_threshold(samples: Sequence[CalibrationSample], matcher: Matcher) -> CalibrationResult:
    """Threshold = median face-set dissimilarity over same-person samples."""
    if not any(s.same_person for s in samples):
        raise NoPositiveSamples("calibration needs at least one same-person pair")
    self_phi: dict[str, float] = {}

    def phi(fs: FaceSet) -> float:
        if fs.set_id not in self_phi:
            self_phi[fs.set_id] = self_similarity_summary(fs, matcher).phi
        return self_phi[fs.set_id]

    delta_s, delta_d = [], []
    for s in samples:
        a, b = (s.set_a, s.set_b) if s.set_a.set_id <= s.set_b.set_id else (s.set_b, s.set_a)
        phi_c = cross_similarity_summary(a, b, matcher).phi
        value = _symmetrized(phi(a), phi(b), phi_c)
        (delta_s if s.same_person else delta_d).append(value)
    return result_from_values(delta_s, delta_d)


def require_training(dataset: Dataset, allow_untagged: bool = False) -> None:
    if dataset.split != TRAIN_SPLIT and not allow_untagged:
        raise CalibrationLeakage(
            f"calibration data must be flagged split={TRAIN_SPLIT!r} (got {dataset.split!r})")


def labelled_pairs(dataset: Dataset,
                   pairs: Iterable[tuple[str, str]] | None = None) -> list[tuple[int, int, bool]]:
    """Index pairs ``(m, n, same_person)``; every pair of face-sets by default."""
    labels = dataset.truth_labels()
    if labels is None:
        raise ValueError("calibration dataset needs a true identity on every face-example")
    ids = dataset.set_ids
    if pairs is None:
        index_pairs = itertools.combinations(range(len(ids)), 2)
    else:
        pos = {sid: i for i, sid in enumerate(ids)}
        index_pairs = [(pos[a], pos[b]) for a, b in pairs]
    return [(m, n, labels[ids[m]] == labels[ids[n]]) for m, n in index_pairs if m != n]


def calibration_samples(dataset: Dataset, pairs: Iterable[tuple[str, str]] | None = None,
                        allow_untagged: bool = False) -> list[CalibrationSample]:
    require_training(dataset, allow_untagged)
    sets = dataset.face_sets
    return [CalibrationSample(sets[m], sets[n], same) for m, n, same in labelled_pairs(dataset, pairs)]


def calibrate_from_matrix(dataset: Dataset, D: DissimilarityMatrix,
                          pairs: Iterable[tuple[str, str]] | None = None) -> CalibrationResult:
    """Split the entries of a precomputed matrix into same/different pairs."""
    delta_s, delta_d = [], []
    for m, n, same in labelled_pairs(dataset, pairs):
        (delta_s if same else delta_d).append(float(D.values[m, n]))
    return result_from_values(delta_s, delta_d)


def calibrate_dataset(dataset: Dataset, matcher: Matcher | None = None,
                      pairs: Iterable[tuple[str, str]] | None = None, allow_untagged: bool = False,
                      parallelism: int = 1,
                      matrix_fn: Callable[[Dataset], DissimilarityMatrix] | None = None,
                      ) -> CalibrationResult:
    """Calibrate on a training dataset.

    By default the face-set dissimilarity matrix is built with ``matcher``;
    ``matrix_fn`` substitutes another representation (e.g. the mean-descriptor
    baseline) so every method gets its own threshold from the same pairs.
    """
    require_training(dataset, allow_untagged)
    if matrix_fn is not None:
        D = matrix_fn(dataset)
    else:
        D = build_dissimilarity_matrix(dataset, matcher, parallelism=parallelism)
    return calibrate_from_matrix(dataset, D, pairs)
