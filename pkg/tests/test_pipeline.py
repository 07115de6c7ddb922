import json

import numpy as np
import pytest

from egofaces import formats
from egofaces.errors import CalibrationLeakage, ConfigError, StageError
from egofaces.pipeline import PipelineConfig, run_pipeline
from egofaces.synth import SynthConfig, generate_calibration_split, generate_dataset


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    cfg = SynthConfig(num_identities=6, sets_per_identity=3, cooccurrence_rate=0.3, seed=1)
    ds, truth = generate_dataset(cfg)
    cal, _ = generate_calibration_split(cfg)
    formats.write_manifest(ds, root / "ds.json")
    formats.write_manifest(cal, root / "cal.json")
    (root / "truth.csv").write_text(formats.dumps_truth(truth))
    return root


def config(corpus, out, **kw):
    return PipelineConfig(dataset_path=str(corpus / "ds.json"), calibration_path=str(corpus / "cal.json"),
                          output_dir=str(out), **kw)


def test_outputs_and_schema(corpus, tmp_path):
    report = run_pipeline(config(corpus, tmp_path, baselines=("mean_descriptor", "face_pairs",
                                                              "set_pairs_unconstrained"),
                                 dump_matrices=True))
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert {"nmi", "ari", "nmi_pct", "ari_pct", "theta", "n_face_sets"} <= set(metrics)
    assert "timing" not in metrics
    assert metrics["n_face_sets"] == 18
    assert metrics["nmi_pct"] == pytest.approx(100 * metrics["nmi"])
    assert set(metrics["methods"]) == {"set_pairs", "mean_descriptor", "face_pairs", "set_pairs_unconstrained"}
    assert all(m["nmi"] is not None for m in metrics["methods"].values())

    lines = (tmp_path / "assignment.csv").read_text().splitlines()
    assert len(lines) == 18 and lines == sorted(lines)

    series = formats.loads_plotdata((tmp_path / "plotdata.csv").read_text())
    assert series["median_s"] == [report.theta]
    assert series["median_d"] == [report.primary.calibration.median_d]

    D = formats.read_matrix(tmp_path / "D.txt")
    assert np.allclose(D, report.D.values, atol=1e-9)
    rep = json.loads((tmp_path / "report.json").read_text())
    assert "timing" in rep and "dissimilarity" in rep["timing"]
    assert rep["dendrogram"]["merges"] == 17
    assert PipelineConfig.from_dict(json.loads((tmp_path / "config.json").read_text())) == report.config


def test_calibrate_without_path_fails_before_compute(corpus, tmp_path):
    cfg = PipelineConfig(dataset_path=str(corpus / "ds.json"), output_dir=str(tmp_path / "o"))
    with pytest.raises(ConfigError):
        run_pipeline(cfg)
    assert not (tmp_path / "o").exists()


def test_fixed_theta(corpus, tmp_path):
    report = run_pipeline(PipelineConfig(dataset_path=str(corpus / "ds.json"), output_dir=str(tmp_path),
                                         theta=0.0))
    assert report.primary.assignment.num_clusters == 18
    assert not (tmp_path / "plotdata.csv").exists()


def test_baseline_needs_theta_when_fixed(corpus, tmp_path):
    with pytest.raises(ConfigError):
        run_pipeline(PipelineConfig(dataset_path=str(corpus / "ds.json"), output_dir=str(tmp_path),
                                    theta=0.1, baselines=("mean_descriptor",)))


def test_stage_error_and_no_partial_outputs(corpus, tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    cfg = PipelineConfig(dataset_path=str(tmp_path / "bad.json"), output_dir=str(tmp_path / "o"), theta=0.1)
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "load"
    assert not (tmp_path / "o").exists()


def test_untagged_calibration_rejected(corpus, tmp_path):
    cfg = PipelineConfig(dataset_path=str(corpus / "ds.json"), calibration_path=str(corpus / "truth.csv"),
                         output_dir=str(tmp_path))
    with pytest.raises(StageError):
        run_pipeline(cfg)
    with pytest.raises(CalibrationLeakage):
        run_pipeline(PipelineConfig(dataset_path=str(corpus / "ds.json"),
                                    calibration_path=str(corpus / "ds.json"), output_dir=str(tmp_path)))
    with pytest.raises(StageError) as info:
        run_pipeline(PipelineConfig(dataset_path=str(corpus / "ds.json"), calibration_path=str(corpus / "ds.json"),
                                    allow_same_dataset=True, output_dir=str(tmp_path)))
    assert isinstance(info.value.cause, CalibrationLeakage)


def test_hard_max_never_coclusters(corpus, tmp_path):
    for linkage in ("single", "complete", "average"):
        report = run_pipeline(config(corpus, tmp_path, constraint_mode="hard_max", linkage=linkage,
                                     theta=1.0), write=False)
        labels = report.primary.assignment.labels
        ids = report.D.set_ids
        for i, j in zip(*np.nonzero(report.C)):
            assert labels[ids[i]] != labels[ids[j]]


def test_truth_file_and_in_memory(corpus, tmp_path):
    ds = formats.read_manifest(corpus / "ds.json")
    cal = formats.read_manifest(corpus / "cal.json")
    a = run_pipeline(PipelineConfig(output_dir=str(tmp_path)), dataset=ds, calibration=cal, write=False)
    b = run_pipeline(config(corpus, tmp_path, truth_path=str(corpus / "truth.csv")), write=False)
    assert a.metrics_document() == b.metrics_document()


@pytest.mark.parametrize("kwargs", [
    {"theta": "auto"}, {"theta": -1.0}, {"linkage": "ward"}, {"constraint_mode": "x"},
    {"baselines": ("spectral",)}, {"parallelism": -1}, {"nmi_normalization": "min"},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        PipelineConfig(**kwargs)


def test_config_unknown_keys():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"thetaa": 1})


def test_patch_corpus_with_tracking(tmp_path):
    from egofaces.matching import MatcherConfig
    from egofaces.tracklets import TrackingConfig

    cfg = SynthConfig(num_identities=3, sets_per_identity=2, examples_per_set=(3, 5), mode="patch",
                      patch_size=32, contiguous_frames=True, with_detections=True, seed=4)
    ds, truth = generate_dataset(cfg)
    cal, _ = generate_calibration_split(cfg)
    formats.write_manifest(ds, tmp_path / "ds.json")
    formats.write_manifest(cal, tmp_path / "cal.json")
    pc = PipelineConfig(dataset_path=str(tmp_path / "ds.json"), calibration_path=str(tmp_path / "cal.json"),
                        output_dir=str(tmp_path / "out"), track=True,
                        tracking=TrackingConfig(min_face_frame_ratio=0.0),
                        matcher=MatcherConfig(kind="quad_patch", patch_size=32, grid=2, search_radius=2))
    report = run_pipeline(pc)
    assert report.n_face_sets == len(ds.face_sets)
    cfg_back = PipelineConfig.from_dict(json.loads((tmp_path / "out" / "config.json").read_text()))
    assert cfg_back == report.config
    assert 0.0 <= report.primary.metrics["nmi"] <= 1.0
    assert "track" in report.timing
