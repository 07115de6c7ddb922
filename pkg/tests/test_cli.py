import json

import pytest

from egofaces.cli import main


@pytest.fixture
def corpus(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "ds.json"), "--calibration-out", str(tmp_path / "cal.json"),
                 "--truth-out", str(tmp_path / "truth.csv"), "--identities", "5", "--sets-per-identity", "3",
                 "--cooccurrence-rate", "0.3", "--with-detections", "--contiguous"]) == 0
    return tmp_path


def test_validate(corpus, capsys):
    assert main(["validate", str(corpus / "ds.json")]) == 0
    assert "15 face-sets" in capsys.readouterr().out


def test_validate_reports_violations(tmp_path, capsys):
    doc = {"sequences": [{"sequence_id": "s", "frame_count": 1, "face_set_ids": ["s/p0", "gone"]}],
           "face_sets": [{"set_id": "s/p0", "sequence_id": "s", "example_ids": ["e"]}],
           "examples": [{"example_id": "e", "sequence_id": "s", "frame_index": 3, "bbox": [0, 0, 1, 1],
                         "descriptor": [1.0]}]}
    (tmp_path / "m.json").write_text(json.dumps(doc))
    assert main(["validate", str(tmp_path / "m.json")]) == 1
    out = capsys.readouterr().out
    assert "dangling_reference" in out and "frame_out_of_range" in out


def test_parse_error_exit_code(tmp_path, capsys):
    (tmp_path / "m.json").write_text("[1,")
    assert main(["validate", str(tmp_path / "m.json")]) == 1
    assert "m.json" in capsys.readouterr().err


def test_stepwise_commands(corpus, capsys):
    d = str(corpus)
    assert main(["track", f"{d}/ds.json", "--out", f"{d}/tracked.json"]) == 0
    assert main(["validate", f"{d}/tracked.json"]) == 0
    assert main(["calibrate", f"{d}/cal.json", "--out-dir", f"{d}/cal"]) == 0
    theta = json.loads((corpus / "cal" / "calibration.json").read_text())["theta"]
    assert (corpus / "cal" / "plotdata.csv").exists() and (corpus / "cal" / "config.json").exists()
    assert main(["dissim", f"{d}/ds.json", "--out", f"{d}/D.txt", "--constraint-mode", "weight",
                 "--constraints-out", f"{d}/C.txt"]) == 0
    assert main(["cluster", f"{d}/ds.json", "--matrix", f"{d}/D.txt", "--theta", repr(theta),
                 "--out", f"{d}/a.csv"]) == 0
    assert main(["cluster", f"{d}/ds.json", "--theta", repr(theta), "--out", f"{d}/b.csv"]) == 0
    assert (corpus / "a.csv").read_text() == (corpus / "b.csv").read_text()
    capsys.readouterr()
    assert main(["evaluate", f"{d}/a.csv", "--truth", f"{d}/truth.csv"]) == 0
    assert set(json.loads(capsys.readouterr().out)) == {"nmi", "ari", "nmi_pct", "ari_pct"}
    assert main(["evaluate", f"{d}/a.csv", "--manifest", f"{d}/ds.json", "--out", f"{d}/m.json"]) == 0


def test_run_and_report(corpus, capsys):
    d = str(corpus)
    assert main(["run", "--dataset", f"{d}/ds.json", "--calibration", f"{d}/cal.json", "--out-dir", f"{d}/out",
                 "--baseline", "mean_descriptor", "--parallelism", "2"]) == 0
    assert "mean_descriptor" in capsys.readouterr().out
    cfg = json.loads((corpus / "out" / "config.json").read_text())
    assert cfg["parallelism"] == 2 and cfg["matcher"]["kind"] == "descriptor"
    assert main(["report", f"{d}/out"]) == 0
    assert "set_pairs" in capsys.readouterr().out
    # the written config reproduces the run
    assert main(["run", "--config", f"{d}/out/config.json", "--out-dir", f"{d}/again"]) == 0
    assert (corpus / "again" / "assignment.csv").read_bytes() == (corpus / "out" / "assignment.csv").read_bytes()


def test_run_config_error(corpus, capsys):
    assert main(["run", "--dataset", str(corpus / "ds.json"), "--out-dir", str(corpus / "o")]) == 2
    assert "calibration" in capsys.readouterr().err
    assert not (corpus / "o").exists()


def test_track_without_detections(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "ds.json"), "--identities", "2"]) == 0
    assert main(["track", str(tmp_path / "ds.json"), "--out", str(tmp_path / "t.json")]) == 2
