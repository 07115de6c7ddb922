import itertools
import math

import numpy as np
import pytest

from egofaces.errors import ConfigError, InfeasibleGeometry
from egofaces.model import validate_dataset
from egofaces.synth import (
    SynthConfig,
    calibration_config,
    generate_calibration_split,
    generate_dataset,
    place_centroids,
)


def test_shape_of_default_corpus():
    ds, truth = generate_dataset(SynthConfig(seed=3))
    assert validate_dataset(ds) == []
    assert len(ds.face_sets) == 100
    assert all(5 <= fs.length <= 15 for fs in ds.face_sets)
    counts = {}
    for ident in truth.values():
        counts[ident] = counts.get(ident, 0) + 1
    assert len(counts) == 20 and set(counts.values()) == {5}
    assert truth == ds.truth_labels()


def test_deterministic():
    a, _ = generate_dataset(SynthConfig(seed=9, cooccurrence_rate=0.3))
    b, _ = generate_dataset(SynthConfig(seed=9, cooccurrence_rate=0.3))
    assert a == b


def test_centroid_margin_and_confusable_distance():
    cfg = SynthConfig(confusable_pairs=5, inter_margin=3.0, intra_sigma=1.0)
    c = place_centroids(cfg, np.random.default_rng(0))
    for i, j in itertools.combinations(range(20), 2):
        d = np.linalg.norm(c[i] - c[j])
        if j == i + 1 and i % 2 == 0 and i < 10:
            assert d == pytest.approx(0.5)
        else:
            assert d >= 3.0


def test_intra_sigma_is_rms_radius():
    cfg = SynthConfig(num_identities=2, sets_per_identity=40, descriptor_dim=32, intra_sigma=2.0, seed=1)
    ds, _ = generate_dataset(cfg)
    by_id = {}
    for ex in ds.examples():
        by_id.setdefault(ex.true_identity, []).append(ex.descriptor)
    for vecs in by_id.values():
        v = np.array(vecs)
        rms = math.sqrt(np.mean(np.sum((v - v.mean(axis=0)) ** 2, axis=1)))
        assert rms == pytest.approx(2.0, rel=0.05)


def test_cooccurrence_rate():
    ds, truth = generate_dataset(SynthConfig(cooccurrence_rate=0.3, seed=0))
    pairs = [s for s in ds.sequences if len(s.face_set_ids) == 2]
    assert len(pairs) == round(0.3 * 100 / 1.3)
    for s in pairs:
        a, b = s.face_set_ids
        assert truth[a] != truth[b]


def test_confusable_partners_always_cooccur():
    ds, truth = generate_dataset(SynthConfig(confusable_pairs=5, seed=0))
    for p in range(5):
        a, b = f"id{2 * p:02d}", f"id{2 * p + 1:02d}"
        seqs = [s for s in ds.sequences if sorted(truth[x] for x in s.face_set_ids) == [a, b]]
        assert len(seqs) == 5


def test_calibration_split_is_disjoint_and_tagged():
    cfg = SynthConfig(seed=5)
    cal, _ = generate_calibration_split(cfg)
    ds, _ = generate_dataset(cfg)
    assert cal.split == "train" and ds.split is None
    assert calibration_config(cfg).seed != cfg.seed
    assert not np.array_equal(cal.face_sets[0].examples[0].descriptor, ds.face_sets[0].examples[0].descriptor)


def test_patch_mode():
    ds, _ = generate_dataset(SynthConfig(num_identities=3, sets_per_identity=2, mode="patch", patch_size=24))
    ex = next(ds.examples())
    assert ex.descriptor is None and ex.patch.shape == (24, 24) and ex.patch.dtype == np.uint8
    assert validate_dataset(ds) == []


def test_sigma_ratio_spreads():
    ds, _ = generate_dataset(SynthConfig(num_identities=6, sets_per_identity=20, sigma_ratio=9.0, seed=2))
    by_id = {}
    for ex in ds.examples():
        by_id.setdefault(ex.true_identity, []).append(ex.descriptor)
    spreads = [np.std(np.array(v), axis=0).mean() for v in by_id.values()]
    assert max(spreads) / min(spreads) > 1.5


def test_infeasible_geometry():
    with pytest.raises(InfeasibleGeometry):
        place_centroids(SynthConfig(num_identities=30, descriptor_dim=1, centroid_spread=0.1),
                        np.random.default_rng(0))


@pytest.mark.parametrize("kwargs", [
    {"num_identities": 0},
    {"examples_per_set": (5, 2)},
    {"cooccurrence_rate": 1.5},
    {"confusable_pairs": 11},
    {"inter_margin": 0.0},
    {"sigma_ratio": 0.5},
    {"mode": "video"},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SynthConfig(**kwargs)
