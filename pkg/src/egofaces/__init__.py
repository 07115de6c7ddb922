"""Cluster face-sets from egocentric photo-streams into person identities."""

from .calibration import CalibrationResult, CalibrationSample, calibrate_threshold
from .clustering import ClusterAssignment, Dendrogram, MergeStep, agglomerative_cluster, cut_dendrogram
from .dissimilarity import (
    ConstraintMatrix,
    DissimilarityMatrix,
    ScoreMatrix,
    apply_constraints,
    build_dissimilarity_matrix,
    constraint_matrix,
    face_set_dissimilarity,
)
from .matching import MatcherConfig, make_matcher, quad_patch_match
from .metrics import ContingencyTable, ari, contingency_table, evaluate, nmi
from .model import Dataset, Detection, FaceExample, FaceSet, SequenceRecord, validate_dataset
from .pipeline import PipelineConfig, RunReport, run_pipeline
from .synth import SynthConfig, generate_calibration_split, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "CalibrationResult",
    "CalibrationSample",
    "calibrate_threshold",
    "ClusterAssignment",
    "Dendrogram",
    "MergeStep",
    "agglomerative_cluster",
    "cut_dendrogram",
    "ConstraintMatrix",
    "DissimilarityMatrix",
    "ScoreMatrix",
    "apply_constraints",
    "build_dissimilarity_matrix",
    "constraint_matrix",
    "face_set_dissimilarity",
    "MatcherConfig",
    "make_matcher",
    "quad_patch_match",
    "ContingencyTable",
    "ari",
    "contingency_table",
    "evaluate",
    "nmi",
    "Dataset",
    "Detection",
    "FaceExample",
    "FaceSet",
    "SequenceRecord",
    "validate_dataset",
    "PipelineConfig",
    "RunReport",
    "run_pipeline",
    "SynthConfig",
    "generate_calibration_split",
    "generate_dataset",
]
