import io
import math

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from egofaces.errors import (
    ConfigError,
    DimensionMismatch,
    EmptyImage,
    MatcherFailure,
    MissingPair,
    ParseError,
    ScoreOutOfRange,
    ZeroVector,
)
from egofaces.matching import (
    ConstantMatcher,
    DescriptorMatcher,
    MatcherConfig,
    QuadPatchMatcher,
    ScoreTable,
    descriptor_similarity,
    dump_score_table,
    load_score_table,
    make_matcher,
    quad_patch_match,
    quadrant_scores,
)
from egofaces.model import FaceExample

from oracles import cosine_sim, inv_euclidean


def texture(seed, size=80):
    rng = np.random.default_rng(seed)
    t = gaussian_filter(rng.normal(size=(size, size)), 2.0, mode="wrap")
    t = (t - t.min()) / (t.max() - t.min())
    return t * 200 + 20


def ex(eid, descriptor=None, patch=None):
    return FaceExample(eid, "s", 0, (0, 0, 1, 1), patch=patch, descriptor=descriptor)


def test_identical_images_score_one():
    img = texture(0)[:64, :64]
    assert quad_patch_match(img, img) == pytest.approx(1.0, abs=1e-6)


def test_shift_recovered():
    t = texture(1)
    a, b = t[8:72, 8:72], t[10:74, 6:70]
    assert quad_patch_match(a, b) >= 0.95


def test_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    a, b = texture(2)[:64, :64], rng.integers(0, 256, (64, 64))
    s1, s2 = quad_patch_match(a, b), quad_patch_match(b, a)
    assert s1 == s2
    assert 0.0 <= s1 <= 1.0


def test_flat_images_score_half():
    assert quad_patch_match(np.full((64, 64), 7.0), np.full((64, 64), 200.0)) == 0.5


def test_resizes_to_patch_size():
    img = texture(3)
    small = img[::2, ::2]
    assert quad_patch_match(img[:64, :64], small[:40, :40]) > 0.5


def test_quadrant_scores_shape_and_brute_force():
    rng = np.random.default_rng(4)
    src = rng.random((16, 16))
    tgt = rng.random((16, 16))
    out = quadrant_scores(src, tgt, grid=2, radius=1)
    assert out.shape == (2, 2, 4)
    # brute force the top-left quadrant of the top-left patch
    q = src[0:4, 0:4]
    best = -1.0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy < 0 or dx < 0:
                continue
            w = tgt[dy:dy + 4, dx:dx + 4]
            c = np.corrcoef(q.ravel(), w.ravel())[0, 1]
            best = max(best, (c + 1) / 2)
    assert out[0, 0, 0] == pytest.approx(best, abs=1e-12)


def test_empty_image():
    with pytest.raises(EmptyImage):
        quad_patch_match(np.zeros((0, 0)), np.zeros((4, 4)))


def test_descriptor_similarity_oracles():
    rng = np.random.default_rng(5)
    for _ in range(50):
        u, v = rng.normal(size=8), rng.normal(size=8)
        assert descriptor_similarity(u, v, "cosine_sim") == pytest.approx(cosine_sim(u, v), abs=1e-12)
        assert descriptor_similarity(u, v, "inv_euclidean") == pytest.approx(inv_euclidean(u, v), abs=1e-12)


def test_descriptor_errors():
    with pytest.raises(DimensionMismatch):
        descriptor_similarity([1, 2], [1, 2, 3])
    with pytest.raises(ZeroVector):
        descriptor_similarity([0, 0], [1, 2], "cosine_sim")


def test_descriptor_matcher_matrix_agrees_with_pairwise():
    rng = np.random.default_rng(6)
    exs = [ex(f"e{i}", rng.normal(size=4)) for i in range(7)]
    for metric in ("cosine_sim", "inv_euclidean"):
        m = DescriptorMatcher(metric)
        S = m.similarity_matrix(exs)
        assert np.array_equal(S, S.T)
        assert np.all(np.diag(S) == 1.0)
        for i in range(7):
            for j in range(7):
                if i != j:
                    assert S[i, j] == pytest.approx(m.score(exs[i], exs[j]), abs=1e-12)


def test_matcher_wraps_failures_with_pair():
    m = DescriptorMatcher()
    with pytest.raises(MatcherFailure) as info:
        m.score(ex("a", [1.0, 2.0]), ex("b", None))
    assert info.value.pair == ("a", "b")


def test_parallel_matrix_is_identical():
    rng = np.random.default_rng(7)
    exs = [ex(f"e{i}", patch=rng.integers(0, 255, (16, 16))) for i in range(6)]
    m = QuadPatchMatcher(MatcherConfig(kind="quad_patch", patch_size=16, grid=2, search_radius=1))
    assert np.array_equal(m.similarity_matrix(exs, 1), m.similarity_matrix(exs, 4))


def test_score_table_roundtrip(tmp_path):
    data = b"# scores\nb\ta\t0.25\n\na\tc\t1\n"
    table = load_score_table(data)
    assert table.lookup("a", "b") == 0.25 == table.lookup("b", "a")
    buf = io.StringIO()
    dump_score_table(table, buf)
    assert load_score_table(buf.getvalue().encode()).entries == table.entries
    path = tmp_path / "t.tsv"
    path.write_bytes(data)
    m = make_matcher(MatcherConfig(kind="precomputed", score_table_path=str(path)))
    assert m.score(ex("c"), ex("a")) == 1.0
    with pytest.raises(MatcherFailure):
        m.score(ex("b"), ex("c"))


@pytest.mark.parametrize("data, line", [
    (b"a\tb\n", 1),
    (b"# ok\na\tb\tx\n", 2),
    (b"a\tb\t0.1\na\tb\t0.2\n", 2),
    (b"a b 0.5\n", 1),
])
def test_score_table_parse_errors(data, line):
    with pytest.raises(ParseError) as info:
        load_score_table(data, "t.tsv")
    assert info.value.line == line


def test_score_table_range():
    with pytest.raises(ScoreOutOfRange):
        load_score_table(b"a\tb\t1.5\n")
    with pytest.raises(ScoreOutOfRange):
        load_score_table(b"a\tb\tnan\n")


def test_missing_pair():
    with pytest.raises(MissingPair):
        ScoreTable().lookup("x", "y")


def test_constant_matcher():
    assert ConstantMatcher(0.3).score(ex("a"), ex("b")) == 0.3


@pytest.mark.parametrize("kwargs", [
    {"kind": "deep"},
    {"descriptor_metric": "l1"},
    {"patch_size": 60, "grid": 4},
    {"search_radius": -1},
    {"kind": "precomputed"},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        MatcherConfig(**kwargs)


def test_noise_below_same_texture():
    t = texture(8)
    rng = np.random.default_rng(8)
    same = quad_patch_match(t[4:68, 4:68], t[6:70, 5:69] + rng.normal(0, 5, (64, 64)))
    noise = quad_patch_match(t[4:68, 4:68], rng.integers(0, 256, (64, 64)))
    assert same > noise
    assert math.isfinite(same)
