import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egofaces import formats
from egofaces.clustering import ClusterAssignment
from egofaces.errors import ParseError
from egofaces.synth import SynthConfig, generate_dataset


def test_manifest_roundtrip_is_byte_identical(tmp_path):
    ds, _ = generate_dataset(SynthConfig(num_identities=4, sets_per_identity=2, cooccurrence_rate=0.5,
                                         with_detections=True), split="train")
    path = tmp_path / "m.json"
    formats.write_manifest(ds, path)
    first = path.read_bytes()
    back = formats.read_manifest(path)
    assert back == ds
    formats.write_manifest(back, path)
    assert path.read_bytes() == first


def test_patch_manifest_roundtrip(tmp_path):
    ds, _ = generate_dataset(SynthConfig(num_identities=2, sets_per_identity=2, mode="patch", patch_size=16))
    formats.write_manifest(ds, tmp_path / "m.json")
    once = formats.read_manifest(tmp_path / "m.json")
    for a, b in zip(ds.examples(), once.examples()):
        assert np.array_equal(a.patch, b.patch)
    text = (tmp_path / "m.json").read_bytes()
    formats.write_manifest(once, tmp_path / "m.json")
    assert (tmp_path / "m.json").read_bytes() == text
    assert (tmp_path / "patches").is_dir()


def test_optional_keys_omitted():
    ds, _ = generate_dataset(SynthConfig(num_identities=1, sets_per_identity=1, mode="patch"))
    doc = json.loads(formats.dumps_manifest(ds))
    assert "split" not in doc and "descriptor_dim" not in doc and "detections" not in doc


def test_pgm_roundtrip(tmp_path):
    img = np.arange(48, dtype=np.uint8).reshape(6, 8)
    (tmp_path / "p.pgm").write_bytes(formats.pgm_bytes(img))
    assert (tmp_path / "p.pgm").read_bytes().startswith(b"P5")
    assert np.array_equal(formats.read_pgm(tmp_path / "p.pgm"), img)


def _doc():
    return {
        "format": "egofaces-manifest", "version": 1,
        "sequences": [{"sequence_id": "s", "frame_count": 2, "face_set_ids": ["s/p0"]}],
        "face_sets": [{"set_id": "s/p0", "sequence_id": "s", "example_ids": ["e0"]}],
        "examples": [{"example_id": "e0", "sequence_id": "s", "frame_index": 0,
                      "bbox": [0, 0, 4, 4], "descriptor": [1, 2]}],
    }


def test_parse_minimal():
    ds = formats.parse_manifest(_doc())
    assert ds.set_ids == ["s/p0"] and ds.face_sets[0].examples[0].descriptor.tolist() == [1.0, 2.0]


@pytest.mark.parametrize("mutate, where", [
    (lambda d: d["examples"][0].pop("bbox"), "examples[0]"),
    (lambda d: d["examples"][0].update(frame_index="x"), "examples[0]"),
    (lambda d: d["examples"][0].update(bbox=[1, 2]), "examples[0]"),
    (lambda d: d["face_sets"][0].update(example_ids=["nope"]), "face_sets[0]"),
    (lambda d: d["sequences"][0].pop("frame_count"), "sequences[0]"),
    (lambda d: d["examples"].append(dict(d["examples"][0])), "examples[1]"),
    (lambda d: d["examples"][0].update(patch="missing.pgm"), "examples[0]"),
])
def test_parse_errors_name_the_record(mutate, where):
    doc = _doc()
    mutate(doc)
    with pytest.raises(ParseError) as info:
        formats.parse_manifest(doc, base=None, name="m.json")
    assert where in str(info.value)


def test_json_syntax_error_has_line():
    with pytest.raises(ParseError) as info:
        formats.loads_manifest('{\n  "sequences": [\n  oops\n}', name="m.json")
    assert info.value.line == 3


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 6), st.integers(0, 2**32 - 1))
def test_matrix_dump_reload(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.random((n, n)) * 10 ** rng.uniform(-5, 3)
    back = formats.loads_matrix(formats.dumps_matrix(m))
    assert back.shape == (n, n)
    assert np.allclose(back, m, rtol=0, atol=1e-9)


def test_matrix_format_text():
    assert formats.dumps_matrix(np.array([[0, 0.5], [0.5, 0]])) == "2\n0.0 0.5\n0.5 0.0\n"


@pytest.mark.parametrize("text, line", [
    ("", 1), ("x\n", 1), ("2\n0 1\n", 3), ("2\n0 1\n1\n", 3), ("1\nabc\n", 2),
])
def test_matrix_parse_errors(text, line):
    with pytest.raises(ParseError) as info:
        formats.loads_matrix(text)
    assert info.value.line == line


def test_assignment_csv():
    a = ClusterAssignment({"b": 1, "a": 0, "c": 0}, 2)
    text = formats.dumps_assignment(a)
    assert text == "a,0\nb,1\nc,0\n"
    assert formats.loads_assignment(text).labels == a.labels
    with pytest.raises(ParseError) as info:
        formats.loads_assignment("a,0\nb,x\n")
    assert info.value.line == 2


def test_truth_and_pairs():
    assert formats.loads_truth(formats.dumps_truth({"b": "y", "a": "x"})) == {"a": "x", "b": "y"}
    assert formats.loads_pairs("# c\na\tb\n\nc\td\n") == [("a", "b"), ("c", "d")]
    with pytest.raises(ParseError):
        formats.loads_pairs("a b\n")


def test_plotdata():
    text = formats.dumps_plotdata([0.1, 0.2], [0.7], 0.15, 0.7)
    series = formats.loads_plotdata(text)
    assert series == {"delta_s": [0.1, 0.2], "delta_d": [0.7], "median_s": [0.15], "median_d": [0.7]}


def test_atomic_write_leaves_no_temp(tmp_path):
    formats.atomic_write(tmp_path / "x" / "f.txt", "hi")
    assert [p.name for p in (tmp_path / "x").iterdir()] == ["f.txt"]
