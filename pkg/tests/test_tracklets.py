import numpy as np
import pytest

from egofaces.model import Detection, validate_dataset
from egofaces.synth import SynthConfig, generate_dataset
from egofaces.tracklets import (
    Tracklet,
    TrackingConfig,
    bag_and_prototype,
    iou,
    is_trackable,
    link_detections,
    mean_overlap,
    track_dataset,
)


def det(f, x, y=0.0, w=10.0, ident=None, desc=None):
    return Detection(f, (x, y, w, w), descriptor=desc, true_identity=ident)


def frames_of(dets, n):
    out = [[] for _ in range(n)]
    for d in dets:
        out[d.frame_index].append(d)
    return out


def test_iou():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iou((0, 0, 10, 10), (5, 0, 10, 10)) == pytest.approx(50 / 150)
    assert iou((0, 0, 10, 10), (20, 20, 5, 5)) == 0.0
    assert iou((0, 0, 0, 0), (0, 0, 0, 0)) == 0.0


def test_links_by_overlap_and_respects_gap():
    dets = [det(0, 0), det(1, 1), det(4, 2), det(7, 3)]
    ts = link_detections(frames_of(dets, 8), max_gap=2, similarity=None)
    # frame 4 is 2 missing frames after 1 (ok); 7 is 2 after 4 (ok)
    assert [t.frames for t in ts] == [[0, 1, 4, 7]]
    ts = link_detections(frames_of(dets, 8), max_gap=1, similarity=None)
    assert [t.frames for t in ts] == [[0, 1], [4], [7]]
    assert ts[0].confidence == pytest.approx(2 / 8)


def test_two_people_stay_apart():
    a = [det(f, 0, ident="a") for f in range(5)]
    b = [det(f, 100, ident="b") for f in range(5)]
    ts = link_detections(frames_of(a + b, 5), similarity=None)
    assert all(len({d.true_identity for d in t.detections}) == 1 for t in ts)
    assert len(ts) == 2


def test_appearance_links_without_overlap():
    v = [1.0, 0.0, 0.0]
    dets = [det(0, 0, desc=v), det(1, 500, desc=v)]
    assert len(link_detections(frames_of(dets, 2))) == 1
    dets = [det(0, 0, desc=v), det(1, 500, desc=[-1.0, 0.0, 0.0])]
    assert len(link_detections(frames_of(dets, 2))) == 2


def test_best_score_wins():
    # two open tracklets; the new detection overlaps the second one more
    dets = [det(0, 0), det(0, 8), det(1, 7)]
    ts = link_detections(frames_of(dets, 2), similarity=None, iou_min=0.1)
    assert sorted(t.frames for t in ts) == [[0], [0, 1]]
    winner = next(t for t in ts if len(t) == 2)
    assert winner.detections[0].bbox[0] == 8


def brute_force_best(open_tracklets, d, iou_min):
    scored = [(iou(t[-1].bbox, d.bbox), len(t), -k) for k, t in enumerate(open_tracklets)
              if iou(t[-1].bbox, d.bbox) >= iou_min]
    return None if not scored else -max(scored)[2]


def test_greedy_choice_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        first = [det(0, float(x)) for x in rng.uniform(0, 30, size=int(rng.integers(1, 5)))]
        first = sorted(first, key=lambda d: d.bbox[0])
        new = det(1, float(rng.uniform(0, 30)))
        ts = link_detections([first, [new]], similarity=None, iou_min=0.2)
        expected = brute_force_best([[d] for d in first], new, 0.2)
        grown = [k for k, t in enumerate(ts) if len(t) == 2]
        assert grown == ([] if expected is None else [expected])


def test_tracklet_rejects_non_increasing_frames():
    with pytest.raises(ValueError):
        Tracklet((det(1, 0), det(1, 0)), 1.0)
    with pytest.raises(ValueError):
        Tracklet((), 0.0)


def test_bagging_picks_prototype():
    long = Tracklet(tuple(det(f, 0) for f in range(6)), 6 / 8)
    short = Tracklet(tuple(det(f, 1) for f in range(2, 4)), 2 / 8)
    other = Tracklet(tuple(det(f, 200) for f in range(3)), 3 / 8)
    assert mean_overlap(long, short) > 0.5
    assert mean_overlap(long, other) == 0.0
    sets = bag_and_prototype([short, long, other], 0.5, "q")
    assert [fs.set_id for fs in sets] == ["q/p0", "q/p1"]
    assert [ex.frame_index for ex in sets[0].examples] == list(range(6))
    assert sets[0].examples[0].example_id == "q/p0/f000"


def test_trackable_ratio():
    fr = frames_of([det(0, 0), det(1, 0)], 5)
    assert not is_trackable(fr, 0.5)
    assert is_trackable(fr, 0.4)
    assert not is_trackable([], 0.5)


def test_tracking_recovers_synthetic_face_sets():
    cfg = SynthConfig(num_identities=4, sets_per_identity=3, cooccurrence_rate=0.5, contiguous_frames=True,
                      with_detections=True, frames_per_sequence=(10, 20), seed=2)
    ds, truth = generate_dataset(cfg)
    tracked = track_dataset(ds, TrackingConfig(min_face_frame_ratio=0.0))
    assert validate_dataset(tracked) == []

    def signature(d):
        return sorted((fs.sequence_id, tuple(ex.frame_index for ex in fs.examples), fs.identity)
                      for fs in d.face_sets)

    assert signature(tracked) == signature(ds)
