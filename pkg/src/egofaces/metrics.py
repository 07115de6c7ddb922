"""Clustering evaluation against ground-truth identities (NMI and ARI)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Mapping, Sequence

import numpy as np

from .clustering import ClusterAssignment
from .errors import EmptyTable, FewerThanTwoItems, LabelUniverseMismatch

NMI_NORMALIZATIONS = ("arithmetic", "geometric", "max")


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    """Counts of items per (true class, predicted cluster)."""

    counts: np.ndarray
    classes: tuple
    clusters: tuple

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64).reshape(len(self.classes), len(self.clusters))
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _as_mapping(labels) -> Mapping[Hashable, Hashable]:
    if isinstance(labels, ClusterAssignment):
        return labels.labels
    if isinstance(labels, Mapping):
        return labels
    return dict(enumerate(labels))


def _sort_key(v):
    return (type(v).__name__, v) if isinstance(v, (int, float, str)) else (type(v).__name__, str(v))


def contingency_table(truth: Mapping | Sequence, predicted: ClusterAssignment | Mapping | Sequence
                      ) -> ContingencyTable:
    """Cross-tabulate true classes (rows) against predicted clusters (columns).

    Labels may be given as mappings item -> label, or as aligned sequences.
    """
    truth = _as_mapping(truth)
    predicted = _as_mapping(predicted)
    if set(truth) != set(predicted):
        missing = set(predicted) - set(truth)
        extra = set(truth) - set(predicted)
        raise LabelUniverseMismatch(
            f"{len(missing)} predicted items lack a truth label, {len(extra)} truth items were not predicted")
    classes = tuple(sorted(set(truth.values()), key=_sort_key))
    clusters = tuple(sorted(set(predicted.values()), key=_sort_key))
    row = {c: i for i, c in enumerate(classes)}
    col = {c: j for j, c in enumerate(clusters)}
    counts = np.zeros((len(classes), len(clusters)), dtype=np.int64)
    for item, cls in truth.items():
        counts[row[cls], col[predicted[item]]] += 1
    return ContingencyTable(counts, classes, clusters)


def _entropy(sums: np.ndarray, total: int) -> float:
    p = sums[sums > 0] / total
    return float(-(p * np.log(p)).sum())


def _same_partition(table: ContingencyTable) -> bool:
    # identical up to relabeling iff every row and column has one non-zero cell
    nz = table.counts > 0
    return bool((nz.sum(axis=0) == 1).all() and (nz.sum(axis=1) == 1).all())


def nmi(table: ContingencyTable, normalization: str = "arithmetic") -> float:
    """Normalized mutual information in nats.

    Conventions: two identical single-cluster partitions give 1.0; when only
    one side has zero entropy the partitions differ and the result is 0.0.
    """
    if normalization not in NMI_NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    n = table.total
    if n == 0:
        raise EmptyTable("contingency table is empty")
    h_u = _entropy(table.row_sums, n)
    h_v = _entropy(table.col_sums, n)
    if h_u == 0.0 or h_v == 0.0:
        return 1.0 if _same_partition(table) else 0.0
    if _same_partition(table):
        return 1.0

    counts = table.counts.astype(np.float64)
    nz = counts > 0
    outer = np.outer(table.row_sums, table.col_sums).astype(np.float64)
    mi = float((counts[nz] / n * np.log(counts[nz] * n / outer[nz])).sum())
    if normalization == "arithmetic":
        norm = (h_u + h_v) / 2.0
    elif normalization == "geometric":
        norm = math.sqrt(h_u * h_v)
    else:
        norm = max(h_u, h_v)
    return float(min(1.0, max(0.0, mi / norm)))


def _comb2(x) -> int:
    x = int(x)
    return x * (x - 1) // 2


def ari(table: ContingencyTable) -> float:
    """Adjusted Rand index, evaluated in exact rational arithmetic."""
    n = table.total
    if n == 0:
        raise EmptyTable("contingency table is empty")
    if n < 2:
        raise FewerThanTwoItems("ARI needs at least two items")
    index = sum(_comb2(c) for c in table.counts.ravel())
    sum_a = sum(_comb2(c) for c in table.row_sums)
    sum_b = sum(_comb2(c) for c in table.col_sums)
    pairs = _comb2(n)
    expected = Fraction(sum_a * sum_b, pairs)
    maximum = Fraction(sum_a + sum_b, 2)
    if maximum == expected:
        # only reachable when both partitions are all-singletons or one cluster
        return 1.0 if _same_partition(table) else 0.0
    return float((index - expected) / (maximum - expected))


def evaluate(truth, predicted, normalization: str = "arithmetic") -> dict[str, float]:
    """NMI and ARI as fractions and as percentages."""
    table = contingency_table(truth, predicted)
    out = {"nmi": nmi(table, normalization), "ari": ari(table) if table.total >= 2 else 1.0}
    out["nmi_pct"] = 100.0 * out["nmi"]
    out["ari_pct"] = 100.0 * out["ari"]
    return out
