"""End-to-end orchestration: dataset -> face-sets -> D -> clusters -> metrics.

``run_pipeline`` computes everything in memory first and only then writes
outputs, so a failing stage leaves nothing behind. Each stage's exception is
re-raised as ``StageError`` carrying the stage name.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import formats
from .calibration import CalibrationResult, calibrate_from_matrix, require_training, result_from_values
from .clustering import (
    LINKAGES,
    ClusterAssignment,
    Dendrogram,
    agglomerative_cluster,
    example_distance_matrix,
    mean_descriptor_matrix,
)
from .dissimilarity import (
    CONSTRAINT_MODES,
    DissimilarityMatrix,
    apply_constraints,
    build_dissimilarity_matrix,
    constraint_matrix,
)
from .errors import CalibrationLeakage, ConfigError, EgoFacesError, StageError, ValidationFailed
from .matching import MatcherConfig, make_matcher
from .metrics import NMI_NORMALIZATIONS, evaluate
from .model import Dataset, validate_dataset
from .tracklets import TrackingConfig, track_dataset

log = logging.getLogger(__name__)

PRIMARY = "set_pairs"
BASELINES = ("set_pairs_unconstrained", "mean_descriptor", "face_pairs")
OUTPUT_FORMATS = ("json", "csv", "plotdata")


@dataclass(frozen=True)
class PipelineConfig:
    dataset_path: str | None = None
    output_dir: str = "out"
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    linkage: str = "average"
    # a number, or "calibrate" to estimate it from calibration_path
    theta: float | str = "calibrate"
    constraint_mode: str = "weight"
    calibration_path: str | None = None
    # optional TSV of set-id pairs to calibrate on; all pairs by default
    pairs_path: str | None = None
    truth_path: str | None = None
    # accept a calibration set not flagged split="train"
    allow_untagged_calibration: bool = False
    allow_same_dataset: bool = False
    baselines: tuple[str, ...] = ()
    # fixed threshold for baselines when theta is a number
    baseline_theta: float | None = None
    track: bool = False
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    nmi_normalization: str = "arithmetic"
    dump_matrices: bool = False
    parallelism: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "baselines", tuple(self.baselines))
        if isinstance(self.theta, str):
            if self.theta != "calibrate":
                raise ConfigError(f"theta must be a number or 'calibrate', got {self.theta!r}")
        else:
            if not isinstance(self.theta, (int, float)) or math.isnan(self.theta) or self.theta < 0:
                raise ConfigError(f"theta must be >= 0, got {self.theta!r}")
            object.__setattr__(self, "theta", float(self.theta))
        if self.linkage not in LINKAGES:
            raise ConfigError(f"unknown linkage {self.linkage!r}; expected one of {LINKAGES}")
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ConfigError(f"unknown constraint mode {self.constraint_mode!r}")
        if self.nmi_normalization not in NMI_NORMALIZATIONS:
            raise ConfigError(f"unknown NMI normalization {self.nmi_normalization!r}")
        unknown = [b for b in self.baselines if b not in BASELINES]
        if unknown:
            raise ConfigError(f"unknown baselines {unknown}; expected a subset of {BASELINES}")
        if self.parallelism < 0:
            raise ConfigError("parallelism must be >= 0")

    @property
    def calibrate(self) -> bool:
        return self.theta == "calibrate"

    def check_paths(self, have_dataset: bool = False, have_calibration: bool = False) -> None:
        if self.dataset_path is None and not have_dataset:
            raise ConfigError("no dataset given")
        if self.calibrate and self.calibration_path is None and not have_calibration:
            raise ConfigError("theta='calibrate' requires a calibration dataset path")
        if not self.calibrate and self.baselines:
            needs_own = [b for b in self.baselines if b != "set_pairs_unconstrained"]
            if needs_own and self.baseline_theta is None:
                raise ConfigError(f"baselines {needs_own} need baseline_theta when theta is fixed")
        if (self.calibration_path is not None and self.dataset_path is not None
                and not self.allow_same_dataset
                and os.path.realpath(self.calibration_path) == os.path.realpath(self.dataset_path)):
            raise CalibrationLeakage("calibration and evaluation use the same dataset file")

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["matcher"] = self.matcher.to_dict()
        out["baselines"] = list(self.baselines)
        return out

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "PipelineConfig":
        doc = dict(doc)
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if isinstance(doc.get("matcher"), dict):
            doc["matcher"] = MatcherConfig(**doc["matcher"])
        if isinstance(doc.get("tracking"), dict):
            doc["tracking"] = TrackingConfig(**doc["tracking"])
        if "baselines" in doc:
            doc["baselines"] = tuple(doc["baselines"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass
class MethodResult:
    theta: float
    assignment: ClusterAssignment
    metrics: dict[str, float] | None
    calibration: CalibrationResult | None = None


@dataclass
class RunReport:
    config: PipelineConfig
    n_face_sets: int
    theta: float
    methods: dict[str, MethodResult]
    timing: dict[str, float]
    dendrogram: Dendrogram
    D: DissimilarityMatrix | None = None
    D_constrained: DissimilarityMatrix | None = None
    C: np.ndarray | None = None

    @property
    def primary(self) -> MethodResult:
        return self.methods[PRIMARY]

    def dendrogram_summary(self) -> dict[str, Any]:
        heights = self.dendrogram.heights()
        return {
            "merges": len(heights),
            "min_height": min(heights) if heights else None,
            "max_height": max(heights) if heights else None,
            "merges_at_or_below_theta": sum(h <= self.theta for h in heights),
            "num_clusters": self.primary.assignment.num_clusters,
        }

    def metrics_document(self) -> dict[str, Any]:
        """Deterministic metrics (no timing)."""
        m = self.primary.metrics or {}
        methods = {}
        for name, res in self.methods.items():
            entry: dict[str, Any] = {"theta": res.theta, "num_clusters": res.assignment.num_clusters}
            entry.update(res.metrics or {"nmi": None, "ari": None, "nmi_pct": None, "ari_pct": None})
            methods[name] = entry
        return {
            "nmi": m.get("nmi"),
            "ari": m.get("ari"),
            "nmi_pct": m.get("nmi_pct"),
            "ari_pct": m.get("ari_pct"),
            "theta": self.theta,
            "n_face_sets": self.n_face_sets,
            "methods": methods,
        }

    def to_dict(self) -> dict[str, Any]:
        doc = self.metrics_document()
        doc["config"] = self.config.to_dict()
        doc["dendrogram"] = self.dendrogram_summary()
        doc["timing"] = dict(self.timing)
        return doc


class _Stages:
    def __init__(self):
        self.timing: dict[str, float] = {}

    def run(self, name: str, fn: Callable, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except (EgoFacesError, ValueError, KeyError, OSError) as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timing[name] = self.timing.get(name, 0.0) + time.perf_counter() - start


def load_dataset(path: str | os.PathLike) -> Dataset:
    """Read and validate a manifest; raises ValidationFailed on any violation."""
    dataset = formats.read_manifest(path)
    violations = validate_dataset(dataset)
    if violations:
        raise ValidationFailed(violations)
    return dataset


def _face_pair_assignment(dataset: Dataset, theta: float, linkage: str) -> ClusterAssignment:
    """Cluster single examples, then give each face-set its most common cluster."""
    E = example_distance_matrix(dataset)
    _, example_assignment = agglomerative_cluster(E, linkage, theta)
    labels = {}
    for fs in dataset.face_sets:
        votes = Counter(example_assignment.labels[ex.example_id] for ex in fs.examples)
        top = max(votes.values())
        labels[fs.set_id] = min(c for c, v in votes.items() if v == top)
    return ClusterAssignment(labels, len(set(labels.values())))


def _face_pair_calibration(dataset: Dataset) -> CalibrationResult:
    E = example_distance_matrix(dataset)
    owner, ident = [], []
    for fs in dataset.face_sets:
        for ex in fs.examples:
            owner.append(fs.set_id)
            ident.append(ex.true_identity)
    owner = np.array(owner)
    ident = np.array(ident, dtype=object)
    iu = np.triu_indices(len(owner), k=1)
    cross = owner[iu[0]] != owner[iu[1]]
    same = ident[iu[0]] == ident[iu[1]]
    values = E.values[iu]
    return result_from_values(values[cross & same], values[cross & ~same])


def run_pipeline(config: PipelineConfig, dataset: Dataset | None = None,
                 calibration: Dataset | None = None, truth: dict[str, str] | None = None,
                 write: bool = True) -> RunReport:
    """Run every stage and (optionally) write outputs to ``config.output_dir``.

    ``dataset`` / ``calibration`` / ``truth`` may be passed in memory instead
    of being read from the configured paths.
    """
    config.check_paths(dataset is not None, calibration is not None)
    stages = _Stages()
    if dataset is None:
        dataset = stages.run("load", load_dataset, config.dataset_path)
    if calibration is None and config.calibrate:
        calibration = stages.run("load_calibration", load_dataset, config.calibration_path)
    if calibration is not None:
        stages.run("load_calibration", require_training, calibration, config.allow_untagged_calibration)
    if config.track:
        dataset = stages.run("track", track_dataset, dataset, config.tracking)
        if calibration is not None and calibration.detections:
            calibration = stages.run("track", track_dataset, calibration, config.tracking)
    if truth is None and config.truth_path is not None:
        truth = stages.run("load", lambda p: formats.loads_truth(Path(p).read_text("utf-8"), p),
                           config.truth_path)
    if truth is None:
        truth = dataset.truth_labels()
    pairs = None
    if config.pairs_path is not None:
        pairs = stages.run("load_calibration",
                           lambda p: formats.loads_pairs(Path(p).read_text("utf-8"), p), config.pairs_path)

    matcher = stages.run("matcher", make_matcher, config.matcher)
    D = stages.run("dissimilarity", build_dissimilarity_matrix, dataset, matcher, config.parallelism)
    C = stages.run("constraints", constraint_matrix, dataset)
    D_con = stages.run("constraints", apply_constraints, D, C, config.constraint_mode)

    def calibrate(matrix_fn):
        Dc = matrix_fn(calibration)
        return calibrate_from_matrix(calibration, Dc, pairs)

    def eq1(ds):
        return build_dissimilarity_matrix(ds, matcher, config.parallelism)

    cal = None
    if config.calibrate:
        cal = stages.run("calibrate", calibrate, eq1)
        theta = cal.theta
    else:
        theta = float(config.theta)

    cannot_link = C if config.constraint_mode == "hard_max" else None
    dendrogram, assignment = stages.run("cluster", agglomerative_cluster, D_con, config.linkage,
                                        theta, cannot_link)
    methods = {PRIMARY: MethodResult(theta, assignment, None, cal)}

    for name in config.baselines:
        if name == "set_pairs_unconstrained":
            _, a = stages.run("baselines", agglomerative_cluster, D, config.linkage, theta)
            methods[name] = MethodResult(theta, a, None, cal)
        elif name == "mean_descriptor":
            bcal = stages.run("baselines", calibrate, mean_descriptor_matrix) if config.calibrate else None
            btheta = bcal.theta if bcal else float(config.baseline_theta)
            M = stages.run("baselines", mean_descriptor_matrix, dataset)
            _, a = stages.run("baselines", agglomerative_cluster, M, config.linkage, btheta)
            methods[name] = MethodResult(btheta, a, None, bcal)
        else:
            bcal = stages.run("baselines", _face_pair_calibration, calibration) if config.calibrate else None
            btheta = bcal.theta if bcal else float(config.baseline_theta)
            a = stages.run("baselines", _face_pair_assignment, dataset, btheta, config.linkage)
            methods[name] = MethodResult(btheta, a, None, bcal)

    if truth is not None:
        for res in methods.values():
            res.metrics = stages.run("evaluate", evaluate, truth, res.assignment, config.nmi_normalization)

    report = RunReport(config, len(dataset.face_sets), theta, methods, stages.timing, dendrogram,
                       D, D_con, C.flags)
    if write:
        start = time.perf_counter()
        emit_report(report, config.output_dir)
        report.timing["write"] = time.perf_counter() - start
        formats.atomic_write(Path(config.output_dir) / "report.json", formats.dumps_json(report.to_dict()))
    return report


def emit_report(report: RunReport, output_dir: str | os.PathLike,
                outputs: tuple[str, ...] = OUTPUT_FORMATS) -> list[Path]:
    """Write the run's files; removes whatever it wrote if any write fails."""
    unknown = [f for f in outputs if f not in OUTPUT_FORMATS]
    if unknown:
        raise ConfigError(f"unknown output formats {unknown}")
    out = Path(output_dir)
    files: list[tuple[str, str]] = [("config.json", formats.dumps_json(report.config.to_dict()))]
    if "csv" in outputs:
        files.append(("assignment.csv", formats.dumps_assignment(report.primary.assignment)))
        for name, res in report.methods.items():
            if name != PRIMARY:
                files.append((f"assignment_{name}.csv", formats.dumps_assignment(res.assignment)))
    if "json" in outputs:
        files.append(("metrics.json", formats.dumps_json(report.metrics_document())))
        files.append(("report.json", formats.dumps_json(report.to_dict())))
    cal = report.primary.calibration
    if "plotdata" in outputs and cal is not None:
        files.append(("plotdata.csv", formats.dumps_plotdata(cal.delta_s_values, cal.delta_d_values,
                                                             cal.theta, cal.median_d)))
    if report.config.dump_matrices and report.D is not None:
        files.append(("D.txt", formats.dumps_matrix(report.D.values)))
        files.append(("D_constrained.txt", formats.dumps_matrix(report.D_constrained.values)))
        files.append(("C.txt", formats.dumps_matrix(report.C)))
        files.append(("set_ids.txt", "".join(f"{sid}\n" for sid in report.D.set_ids)))

    written: list[Path] = []
    try:
        for name, text in files:
            written.append(formats.atomic_write(out / name, text))
    except EgoFacesError:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return written


def render_table(metrics: dict[str, Any]) -> str:
    """Plain-text table of per-method percentages."""
    rows = [("method", "theta", "clusters", "NMI %", "ARI %")]
    for name, m in metrics["methods"].items():
        pct = (lambda v: "n/a" if v is None else f"{v:.2f}")
        rows.append((name, f"{m['theta']:.6g}", str(m["num_clusters"]), pct(m["nmi_pct"]), pct(m["ari_pct"])))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
