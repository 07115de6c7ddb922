"""Domain types for face discovery in egocentric photo-streams.

A *face-example* is one detected face (bounding box) in one frame of a
sequence. A *face-set* collects every face-example of one individual inside
one sequence and is the unit that gets clustered into identities.

All types are immutable after construction. Pixel grids and descriptors are
stored as read-only numpy arrays.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

BBox = tuple[float, float, float, float]

# ITU-R BT.601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114])


def to_grayscale(pixels) -> np.ndarray:
    """Return a read-only 2-D uint8 luminance grid; color is discarded."""
    arr = np.asarray(pixels)
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            arr = arr[..., :3]
        if arr.shape[2] == 1:
            arr = arr[..., 0]
        else:
            arr = arr[..., :3].astype(np.float64) @ _LUMA
    if arr.ndim != 2:
        raise ValueError(f"patch must be a 2-D grid, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    else:
        arr = arr.copy()
    arr.setflags(write=False)
    return arr


def _frozen_vector(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FaceExample:
    example_id: str
    sequence_id: str
    frame_index: int
    bbox: BBox
    patch: np.ndarray | None = None
    descriptor: np.ndarray | None = None
    true_identity: str | None = None
    # Relative path of the PGM the patch came from; kept for manifest round-trips.
    patch_ref: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        if self.patch is not None:
            object.__setattr__(self, "patch", to_grayscale(self.patch))
        if self.descriptor is not None:
            object.__setattr__(self, "descriptor", _frozen_vector(self.descriptor))

    def __eq__(self, other):
        if not isinstance(other, FaceExample):
            return NotImplemented
        return (
            self.example_id == other.example_id
            and self.sequence_id == other.sequence_id
            and self.frame_index == other.frame_index
            and self.bbox == other.bbox
            and self.true_identity == other.true_identity
            and self.patch_ref == other.patch_ref
            and _arrays_equal(self.patch, other.patch)
            and _arrays_equal(self.descriptor, other.descriptor)
        )

    __hash__ = None  # type: ignore[assignment]


def _arrays_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclass(frozen=True)
class FaceSet:
    set_id: str
    sequence_id: str
    examples: tuple[FaceExample, ...]

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))

    @property
    def length(self) -> int:
        return len(self.examples)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[FaceExample]:
        return iter(self.examples)

    @property
    def identity(self) -> str | None:
        """The shared ground-truth identity, or None if missing or mixed."""
        labels = {ex.true_identity for ex in self.examples}
        if len(labels) != 1:
            return None
        return labels.pop()


@dataclass(frozen=True)
class SequenceRecord:
    sequence_id: str
    frame_count: int
    face_set_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "face_set_ids", tuple(self.face_set_ids))


@dataclass(frozen=True)
class Detection:
    """One face detection in one frame, before tracking."""

    frame_index: int
    bbox: BBox
    patch: np.ndarray | None = None
    descriptor: np.ndarray | None = None
    true_identity: str | None = None
    # where the patch lives on disk, relative to the manifest
    patch_ref: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        if self.patch is not None:
            object.__setattr__(self, "patch", to_grayscale(self.patch))
        if self.descriptor is not None:
            object.__setattr__(self, "descriptor", _frozen_vector(self.descriptor))

    def __eq__(self, other):
        if not isinstance(other, Detection):
            return NotImplemented
        return (
            self.frame_index == other.frame_index
            and self.bbox == other.bbox
            and self.true_identity == other.true_identity
            and _arrays_equal(self.patch, other.patch)
            and _arrays_equal(self.descriptor, other.descriptor)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Dataset:
    sequences: tuple[SequenceRecord, ...]
    face_sets: tuple[FaceSet, ...]
    descriptor_dim: int | None = None
    # "train" marks a calibration dataset; anything else is evaluation data.
    split: str | None = None
    # Raw per-frame detections keyed by sequence_id, for the tracking stage.
    detections: Mapping[str, tuple[tuple[Detection, ...], ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        object.__setattr__(self, "face_sets", tuple(self.face_sets))
        dets = {k: tuple(tuple(f) for f in v) for k, v in dict(self.detections).items()}
        object.__setattr__(self, "detections", dets)

    @property
    def set_ids(self) -> list[str]:
        return [fs.set_id for fs in self.face_sets]

    def face_set(self, set_id: str) -> FaceSet:
        for fs in self.face_sets:
            if fs.set_id == set_id:
                return fs
        raise KeyError(set_id)

    def examples(self) -> Iterator[FaceExample]:
        for fs in self.face_sets:
            yield from fs.examples

    def truth_labels(self) -> dict[str, str] | None:
        """Map set_id to ground-truth identity, or None if any set is unlabeled."""
        out = {}
        for fs in self.face_sets:
            ident = fs.identity
            if ident is None:
                return None
            out[fs.set_id] = ident
        return out

    def sorted_by_set_id(self) -> "Dataset":
        return Dataset(
            sequences=tuple(sorted(self.sequences, key=lambda s: s.sequence_id)),
            face_sets=tuple(sorted(self.face_sets, key=lambda f: f.set_id)),
            descriptor_dim=self.descriptor_dim,
            split=self.split,
            detections=self.detections,
        )


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.subject}: {self.message}"


ValidationReport = list[Violation]


def validate_dataset(dataset: Dataset) -> ValidationReport:
    """Return every invariant violation found in ``dataset``.

    Violations are data: this never raises for malformed content, and an
    empty list means the dataset is valid.
    """
    report: list[Violation] = []

    def flag(code: str, subject: str, message: str) -> None:
        report.append(Violation(code, subject, message))

    seq_counts = Counter(s.sequence_id for s in dataset.sequences)
    for seq_id, n in sorted(seq_counts.items()):
        if n > 1:
            flag("duplicate_sequence_id", seq_id, f"sequence_id used by {n} sequences")

    set_counts = Counter(fs.set_id for fs in dataset.face_sets)
    for set_id, n in sorted(set_counts.items()):
        if n > 1:
            flag("duplicate_set_id", set_id, f"set_id used by {n} face-sets")

    sets_by_id: dict[str, list[FaceSet]] = {}
    for fs in dataset.face_sets:
        sets_by_id.setdefault(fs.set_id, []).append(fs)
    frame_counts = {s.sequence_id: s.frame_count for s in dataset.sequences}
    referenced: set[str] = set()

    for seq in dataset.sequences:
        if not isinstance(seq.frame_count, (int, np.integer)) or seq.frame_count <= 0:
            flag("bad_frame_count", seq.sequence_id, f"frame_count={seq.frame_count!r} is not positive")
        dup = [k for k, n in Counter(seq.face_set_ids).items() if n > 1]
        for set_id in dup:
            flag("duplicate_reference", seq.sequence_id, f"face_set_ids lists {set_id!r} more than once")
        for set_id in dict.fromkeys(seq.face_set_ids):
            referenced.add(set_id)
            candidates = sets_by_id.get(set_id)
            if not candidates:
                flag("dangling_reference", seq.sequence_id, f"references missing face-set {set_id!r}")
            elif not any(fs.sequence_id == seq.sequence_id for fs in candidates):
                flag("reference_mismatch", seq.sequence_id,
                     f"lists face-set {set_id!r} which belongs to another sequence")

    dims: Counter[int] = Counter()
    example_owner: dict[str, str] = {}
    for fs in dataset.face_sets:
        if fs.sequence_id not in seq_counts:
            flag("unknown_sequence", fs.set_id, f"sequence {fs.sequence_id!r} does not exist")
        elif fs.set_id not in referenced:
            flag("unreferenced_set", fs.set_id, f"not listed by sequence {fs.sequence_id!r}")
        if fs.length < 1:
            flag("empty_set", fs.set_id, "face-set has no examples")
        if any(ex.sequence_id != fs.sequence_id for ex in fs.examples):
            bad = [ex.example_id for ex in fs.examples if ex.sequence_id != fs.sequence_id]
            flag("sequence_mismatch", fs.set_id,
                 f"examples {bad} do not belong to sequence {fs.sequence_id!r}")
        id_counts = Counter(ex.example_id for ex in fs.examples)
        for ex_id, n in sorted(id_counts.items()):
            if n > 1:
                flag("duplicate_example_id", fs.set_id, f"example_id {ex_id!r} appears {n} times")
        labels = {ex.true_identity for ex in fs.examples}
        if len(labels) > 1:
            shown = sorted(str(x) for x in labels)
            flag("mixed_identity", fs.set_id, f"examples carry different identities {shown}")

        for ex in fs.examples:
            owner = example_owner.setdefault(ex.example_id, fs.set_id)
            if owner != fs.set_id:
                flag("shared_example", ex.example_id, f"appears in face-sets {owner!r} and {fs.set_id!r}")
            if not isinstance(ex.frame_index, (int, np.integer)) or ex.frame_index < 0:
                flag("bad_frame_index", ex.example_id, f"frame_index={ex.frame_index!r}")
            else:
                fc = frame_counts.get(fs.sequence_id)
                if isinstance(fc, (int, np.integer)) and fc > 0 and ex.frame_index >= fc:
                    flag("frame_out_of_range", ex.example_id,
                         f"frame_index {ex.frame_index} >= frame_count {fc}")
            if len(ex.bbox) != 4 or ex.bbox[2] <= 0 or ex.bbox[3] <= 0:
                flag("bad_bbox", ex.example_id, f"bbox {ex.bbox} needs positive width and height")
            if ex.patch is None and ex.descriptor is None:
                flag("no_appearance", ex.example_id, "neither patch nor descriptor present")
            if ex.patch is not None and ex.patch.size == 0:
                flag("empty_patch", ex.example_id, "patch has zero area")
            if ex.descriptor is not None:
                dims[ex.descriptor.shape[0]] += 1

    if dataset.descriptor_dim is not None:
        wrong = sum(n for d, n in dims.items() if d != dataset.descriptor_dim)
        if wrong:
            flag("descriptor_dim", "dataset",
                 f"{wrong} descriptors differ from descriptor_dim={dataset.descriptor_dim}")
    elif len(dims) > 1:
        flag("descriptor_dim", "dataset", f"descriptors have mixed dimensionality {sorted(dims)}")

    return report


def build_dataset(face_sets: Sequence[FaceSet], frame_counts: Mapping[str, int] | None = None,
                  split: str | None = None) -> Dataset:
    """Assemble a Dataset from face-sets, deriving the sequence records.

    Sequence frame counts default to one past the largest frame index seen.
    """
    by_seq: dict[str, list[str]] = {}
    last_frame: dict[str, int] = {}
    dim = None
    for fs in face_sets:
        by_seq.setdefault(fs.sequence_id, []).append(fs.set_id)
        for ex in fs.examples:
            last_frame[fs.sequence_id] = max(last_frame.get(fs.sequence_id, 0), ex.frame_index + 1)
            if ex.descriptor is not None and dim is None:
                dim = int(ex.descriptor.shape[0])
    frame_counts = dict(frame_counts or {})
    sequences = tuple(
        SequenceRecord(seq_id, int(frame_counts.get(seq_id, last_frame.get(seq_id, 1))), tuple(ids))
        for seq_id, ids in sorted(by_seq.items())
    )
    return Dataset(sequences=sequences, face_sets=tuple(face_sets), descriptor_dim=dim, split=split)
