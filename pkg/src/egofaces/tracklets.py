"""Turn per-frame face detections of a sequence into face-sets.

This is a reduced bag-of-tracklets tracker: detections are linked greedily
into tracklets, redundant tracklets that overlap in space are bagged
together, and the best-covered tracklet of each bag (the prototype) becomes
a face-set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .matching import MatcherConfig, descriptor_similarity, quad_patch_match
from .model import BBox, Dataset, Detection, FaceExample, FaceSet, SequenceRecord

log = logging.getLogger(__name__)

__all__ = [
    "Detection", "Tracklet", "TrackingConfig", "iou", "link_detections",
    "bag_and_prototype", "is_trackable", "track_sequence", "track_dataset",
]

SimilarityFn = Callable[[Detection, Detection], float | None]


@dataclass(frozen=True)
class TrackingConfig:
    max_gap: int = 2
    iou_min: float = 0.3
    sim_min: float = 0.7
    overlap_min: float = 0.5
    min_face_frame_ratio: float = 0.5


@dataclass(frozen=True)
class Tracklet:
    detections: tuple[Detection, ...]
    confidence: float

    def __post_init__(self):
        frames = [d.frame_index for d in self.detections]
        if not frames:
            raise ValueError("a tracklet needs at least one detection")
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"tracklet frames must strictly increase: {frames}")

    def __len__(self) -> int:
        return len(self.detections)

    @property
    def frames(self) -> list[int]:
        return [d.frame_index for d in self.detections]

    def at(self, frame_index: int) -> Detection | None:
        for d in self.detections:
            if d.frame_index == frame_index:
                return d
        return None


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def appearance_similarity(a: Detection, b: Detection) -> float | None:
    """Cosine descriptor similarity, else quad-patch similarity, else None."""
    if a.descriptor is not None and b.descriptor is not None:
        return descriptor_similarity(a.descriptor, b.descriptor, "cosine_sim")
    if a.patch is not None and b.patch is not None:
        return quad_patch_match(a.patch, b.patch, MatcherConfig(kind="quad_patch"))
    return None


def link_detections(frames: Sequence[Sequence[Detection]], max_gap: int = 2, iou_min: float = 0.3,
                    sim_min: float = 0.7, similarity: SimilarityFn | None = appearance_similarity,
                    frame_count: int | None = None) -> list[Tracklet]:
    """Greedy frame-to-frame linking.

    Frames are processed in time order and detections within a frame by
    ascending x. A detection extends the best open tracklet whose last
    detection is at most ``max_gap`` missing frames back and that overlaps
    it (IoU >= ``iou_min``) or looks like it (similarity >= ``sim_min``).
    The link score is the larger qualifying value; ties go to the longest
    tracklet, then the oldest. Otherwise a new tracklet starts.

    Confidence is the fraction of the sequence's frames the tracklet covers.
    """
    chains: list[list[Detection]] = []
    ordered = sorted((d for frame in frames for d in frame), key=lambda d: d.frame_index)
    by_frame: dict[int, list[Detection]] = {}
    for d in ordered:
        by_frame.setdefault(d.frame_index, []).append(d)

    for f in sorted(by_frame):
        claimed: set[int] = set()
        for det in sorted(by_frame[f], key=lambda d: (d.bbox[0], d.bbox[1])):
            best, best_key = None, None
            for k, chain in enumerate(chains):
                last = chain[-1]
                if k in claimed or last.frame_index >= f or f - last.frame_index - 1 > max_gap:
                    continue
                overlap = iou(last.bbox, det.bbox)
                sim = similarity(last, det) if similarity is not None else None
                qualifying = []
                if overlap >= iou_min:
                    qualifying.append(overlap)
                if sim is not None and sim >= sim_min:
                    qualifying.append(sim)
                if not qualifying:
                    continue
                key = (max(qualifying), len(chain), -k)
                if best_key is None or key > best_key:
                    best, best_key = k, key
            if best is None:
                chains.append([det])
                claimed.add(len(chains) - 1)
            else:
                chains[best].append(det)
                claimed.add(best)

    total = frame_count if frame_count is not None else len(frames)
    if ordered:
        total = max(total, ordered[-1].frame_index + 1)
    return [Tracklet(tuple(c), len(c) / total) for c in chains]


def mean_overlap(a: Tracklet, b: Tracklet) -> float:
    """Mean per-frame IoU over the frames both tracklets cover (0 if none)."""
    shared = sorted(set(a.frames) & set(b.frames))
    if not shared:
        return 0.0
    return float(np.mean([iou(a.at(f).bbox, b.at(f).bbox) for f in shared]))


def bag_and_prototype(tracklets: Sequence[Tracklet], overlap_min: float = 0.5,
                      sequence_id: str = "seq") -> list[FaceSet]:
    """Group redundant tracklets and emit one face-set per group.

    Tracklets whose mean IoU over shared frames reaches ``overlap_min`` end
    up in the same bag (transitively). The bag's prototype is its
    highest-confidence tracklet (earliest on ties); its detections become the
    face-set examples.
    """
    n = len(tracklets)
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if mean_overlap(tracklets[i], tracklets[j]) >= overlap_min:
                parent[max(find(i), find(j))] = min(find(i), find(j))

    bags: dict[int, list[int]] = {}
    for i in range(n):
        bags.setdefault(find(i), []).append(i)

    face_sets = []
    for k, root in enumerate(sorted(bags)):
        members = bags[root]
        proto = max(members, key=lambda i: (tracklets[i].confidence, len(tracklets[i]), -i))
        set_id = f"{sequence_id}/p{k}"
        examples = tuple(
            FaceExample(
                example_id=f"{set_id}/f{d.frame_index:03d}",
                sequence_id=sequence_id,
                frame_index=d.frame_index,
                bbox=d.bbox,
                patch=d.patch,
                descriptor=d.descriptor,
                true_identity=d.true_identity,
                patch_ref=d.patch_ref,
            )
            for d in tracklets[proto].detections
        )
        face_sets.append(FaceSet(set_id, sequence_id, examples))
    return face_sets


def is_trackable(frames: Sequence[Sequence[Detection]], min_face_frame_ratio: float = 0.5,
                 frame_count: int | None = None) -> bool:
    """Whether enough frames of a segment contain faces to track it."""
    total = frame_count if frame_count is not None else len(frames)
    if total <= 0:
        return False
    with_faces = len({d.frame_index for frame in frames for d in frame})
    return with_faces / total >= min_face_frame_ratio


def track_sequence(sequence_id: str, frames: Sequence[Sequence[Detection]],
                   config: TrackingConfig = TrackingConfig(),
                   frame_count: int | None = None) -> list[FaceSet]:
    tracklets = link_detections(frames, config.max_gap, config.iou_min, config.sim_min,
                                frame_count=frame_count)
    return bag_and_prototype(tracklets, config.overlap_min, sequence_id)


def track_dataset(dataset: Dataset, config: TrackingConfig = TrackingConfig()) -> Dataset:
    """Replace the face-sets of ``dataset`` with ones tracked from its detections.

    Sequences below ``min_face_frame_ratio`` are dropped.
    """
    frame_counts = {s.sequence_id: s.frame_count for s in dataset.sequences}
    sequences, face_sets = [], []
    for seq_id in sorted(dataset.detections):
        frames = dataset.detections[seq_id]
        count = frame_counts.get(seq_id, len(frames))
        if not is_trackable(frames, config.min_face_frame_ratio, count):
            log.info("sequence %s skipped: too few frames with faces", seq_id)
            continue
        sets = track_sequence(seq_id, frames, config, count)
        sequences.append(SequenceRecord(seq_id, count, tuple(fs.set_id for fs in sets)))
        face_sets.extend(sets)
    return Dataset(tuple(sequences), tuple(face_sets), dataset.descriptor_dim, dataset.split,
                   dataset.detections)
