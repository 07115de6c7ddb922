"""On-disk formats.

* dataset manifest: one JSON document with ``sequences``, ``face_sets``,
  ``examples`` and optional ``detections``; descriptors inline, patches as
  paths (relative to the manifest) to 8-bit grayscale PGM files
* matrix dump: first line ``N``, then N lines of N space-separated decimals
* assignment CSV: ``set_id,cluster_id`` per line, sorted by set_id
* truth CSV: ``set_id,identity`` per line, sorted by set_id
* calibration pairs: ``set_a<TAB>set_b`` per line, '#' comments
* metrics JSON and plot-data CSV written by the pipeline

Writers go through ``atomic_write`` so a crash never leaves a half-written
file behind.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

from .clustering import ClusterAssignment
from .errors import IoFailure, ParseError
from .model import Dataset, Detection, FaceExample, FaceSet, SequenceRecord

MANIFEST_FORMAT = "egofaces-manifest"
MANIFEST_VERSION = 1


def atomic_write(path: str | os.PathLike, data: str | bytes) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data.encode("utf-8") if isinstance(data, str) else data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"could not write {path}: {exc}") from exc
    return path


# ---------------------------------------------------------------------------
# PGM patches
# ---------------------------------------------------------------------------

def read_pgm(path: str | os.PathLike) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read grayscale image: {exc}", source=os.fspath(path)) from None


def pgm_bytes(patch: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(patch, dtype=np.uint8), mode="L").save(buf, format="PPM")
    return buf.getvalue()


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text)


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------

def _appearance(record: dict, patch, descriptor, patch_ref: str | None, default_ref: str,
                patches: dict[str, np.ndarray]) -> None:
    if descriptor is not None:
        record["descriptor"] = [float(v) for v in descriptor]
    if patch is not None:
        ref = patch_ref or default_ref
        record["patch"] = ref
        patches[ref] = patch


def manifest_document(dataset: Dataset) -> tuple[dict, dict[str, np.ndarray]]:
    """JSON-ready manifest plus the patch files it references."""
    patches: dict[str, np.ndarray] = {}
    examples = []
    for fs in dataset.face_sets:
        for ex in fs.examples:
            rec: dict[str, Any] = {
                "example_id": ex.example_id,
                "sequence_id": ex.sequence_id,
                "frame_index": int(ex.frame_index),
                "bbox": [float(v) for v in ex.bbox],
            }
            _appearance(rec, ex.patch, ex.descriptor, ex.patch_ref,
                        f"patches/{_safe_name(ex.example_id)}.pgm", patches)
            if ex.true_identity is not None:
                rec["true_identity"] = ex.true_identity
            examples.append(rec)
    doc: dict[str, Any] = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
    }
    if dataset.split is not None:
        doc["split"] = dataset.split
    if dataset.descriptor_dim is not None:
        doc["descriptor_dim"] = dataset.descriptor_dim
    doc.update({
        "sequences": [
            {"sequence_id": s.sequence_id, "frame_count": int(s.frame_count),
             "face_set_ids": list(s.face_set_ids)}
            for s in dataset.sequences
        ],
        "face_sets": [
            {"set_id": fs.set_id, "sequence_id": fs.sequence_id,
             "example_ids": [ex.example_id for ex in fs.examples]}
            for fs in dataset.face_sets
        ],
        "examples": examples,
    })
    if dataset.detections:
        dets = {}
        for seq_id in sorted(dataset.detections):
            records = []
            for frame in dataset.detections[seq_id]:
                for k, det in enumerate(frame):
                    rec = {"frame_index": int(det.frame_index), "bbox": [float(v) for v in det.bbox]}
                    _appearance(rec, det.patch, det.descriptor, det.patch_ref,
                                f"patches/det_{_safe_name(seq_id)}_{det.frame_index:04d}_{k}.pgm",
                                patches)
                    if det.true_identity is not None:
                        rec["true_identity"] = det.true_identity
                    records.append(rec)
            dets[seq_id] = records
        doc["detections"] = dets
    return doc, patches


def dumps_manifest(dataset: Dataset) -> str:
    doc, _ = manifest_document(dataset)
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def write_manifest(dataset: Dataset, path: str | os.PathLike) -> Path:
    """Write the manifest and every referenced PGM patch next to it."""
    path = Path(path)
    doc, patches = manifest_document(dataset)
    for ref, patch in patches.items():
        atomic_write(path.parent / ref, pgm_bytes(patch))
    return atomic_write(path, json.dumps(doc, indent=2, ensure_ascii=False) + "\n")


def _require(rec: Any, key: str, kind, where: str, name: str | None, optional: bool = False):
    if not isinstance(rec, dict):
        raise ParseError(f"{where}: expected an object", source=name)
    if key not in rec or rec[key] is None:
        if optional:
            return None
        raise ParseError(f"{where}: missing field {key!r}", source=name)
    value = rec[key]
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ParseError(f"{where}: field {key!r} has the wrong type", source=name)
    return value


def _parse_bbox(rec, where, name) -> tuple[float, ...]:
    bbox = _require(rec, "bbox", list, where, name)
    if len(bbox) != 4 or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox):
        raise ParseError(f"{where}: bbox must be four numbers", source=name)
    return tuple(float(v) for v in bbox)


def _parse_appearance(rec, where, name, base: Path | None):
    descriptor = _require(rec, "descriptor", list, where, name, optional=True)
    if descriptor is not None:
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in descriptor):
            raise ParseError(f"{where}: descriptor must be a list of numbers", source=name)
        if not all(math.isfinite(v) for v in descriptor):
            raise ParseError(f"{where}: descriptor has non-finite values", source=name)
    ref = _require(rec, "patch", str, where, name, optional=True)
    patch = None
    if ref is not None:
        if base is None:
            raise ParseError(f"{where}: patch paths need a manifest location", source=name)
        patch_path = base / ref
        if not patch_path.is_file():
            raise ParseError(f"{where}: patch file {ref!r} not found", source=name)
        patch = read_pgm(patch_path)
    return descriptor, patch, ref


def parse_manifest(doc: Any, base: Path | None = None, name: str | None = None) -> Dataset:
    """Build a Dataset from a decoded manifest; raises ParseError with the record position."""
    if not isinstance(doc, dict):
        raise ParseError("manifest must be a JSON object", source=name)
    if doc.get("format", MANIFEST_FORMAT) != MANIFEST_FORMAT:
        raise ParseError(f"unknown manifest format {doc.get('format')!r}", source=name)
    for key in ("sequences", "face_sets", "examples"):
        if not isinstance(doc.get(key, []), list):
            raise ParseError(f"section {key!r} must be a list", source=name)

    examples: dict[str, FaceExample] = {}
    for i, rec in enumerate(doc.get("examples", [])):
        where = f"examples[{i}]"
        ex_id = _require(rec, "example_id", str, where, name)
        if ex_id in examples:
            raise ParseError(f"{where}: duplicate example_id {ex_id!r}", source=name)
        descriptor, patch, ref = _parse_appearance(rec, where, name, base)
        examples[ex_id] = FaceExample(
            example_id=ex_id,
            sequence_id=_require(rec, "sequence_id", str, where, name),
            frame_index=_require(rec, "frame_index", int, where, name),
            bbox=_parse_bbox(rec, where, name),
            patch=patch,
            descriptor=descriptor,
            true_identity=_require(rec, "true_identity", str, where, name, optional=True),
            patch_ref=ref,
        )

    face_sets = []
    used: set[str] = set()
    for i, rec in enumerate(doc.get("face_sets", [])):
        where = f"face_sets[{i}]"
        ids = _require(rec, "example_ids", list, where, name)
        members = []
        for ex_id in ids:
            if ex_id not in examples:
                raise ParseError(f"{where}: unknown example {ex_id!r}", source=name)
            members.append(examples[ex_id])
            used.add(ex_id)
        face_sets.append(FaceSet(_require(rec, "set_id", str, where, name),
                                 _require(rec, "sequence_id", str, where, name), tuple(members)))
    orphans = [ex_id for ex_id in examples if ex_id not in used]
    if orphans:
        raise ParseError(f"examples not in any face-set: {orphans[:3]}", source=name)

    sequences = []
    for i, rec in enumerate(doc.get("sequences", [])):
        where = f"sequences[{i}]"
        set_ids = _require(rec, "face_set_ids", list, where, name)
        if not all(isinstance(s, str) for s in set_ids):
            raise ParseError(f"{where}: face_set_ids must be strings", source=name)
        sequences.append(SequenceRecord(_require(rec, "sequence_id", str, where, name),
                                        _require(rec, "frame_count", int, where, name), tuple(set_ids)))

    detections: dict[str, tuple[tuple[Detection, ...], ...]] = {}
    raw_dets = doc.get("detections") or {}
    if not isinstance(raw_dets, dict):
        raise ParseError("section 'detections' must be an object", source=name)
    counts = {s.sequence_id: s.frame_count for s in sequences}
    for seq_id, records in raw_dets.items():
        if not isinstance(records, list):
            raise ParseError(f"detections[{seq_id!r}] must be a list", source=name)
        per_frame: dict[int, list[Detection]] = {}
        for i, rec in enumerate(records):
            where = f"detections[{seq_id!r}][{i}]"
            descriptor, patch, ref = _parse_appearance(rec, where, name, base)
            f = _require(rec, "frame_index", int, where, name)
            if f < 0:
                raise ParseError(f"{where}: negative frame_index", source=name)
            per_frame.setdefault(f, []).append(Detection(
                f, _parse_bbox(rec, where, name), patch, descriptor,
                _require(rec, "true_identity", str, where, name, optional=True), ref))
        n = max(counts.get(seq_id, 0), max(per_frame, default=-1) + 1)
        detections[seq_id] = tuple(tuple(per_frame.get(f, ())) for f in range(n))

    dim = doc.get("descriptor_dim")
    if dim is not None and (not isinstance(dim, int) or isinstance(dim, bool)):
        raise ParseError("descriptor_dim must be an integer", source=name)
    split = doc.get("split")
    if split is not None and not isinstance(split, str):
        raise ParseError("split must be a string", source=name)
    return Dataset(tuple(sequences), tuple(face_sets), dim, split, detections)


def loads_manifest(text: str, base: Path | None = None, name: str | None = None) -> Dataset:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, name) from None
    return parse_manifest(doc, base, name)


def read_manifest(path: str | os.PathLike) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8: {exc}", source=str(path)) from None
    return loads_manifest(text, path.parent, str(path))


# ---------------------------------------------------------------------------
# Matrices
# ---------------------------------------------------------------------------

def dumps_matrix(values: np.ndarray) -> str:
    values = np.asarray(values, dtype=np.float64)
    lines = [str(values.shape[0])]
    # shortest round-trip repr: reload is exact, not just within 1e-9
    lines += [" ".join(repr(float(v)) for v in row) for row in values]
    return "\n".join(lines) + "\n"


def loads_matrix(text: str, name: str | None = None) -> np.ndarray:
    lines = [ln for ln in text.splitlines()]
    if not lines or not lines[0].strip():
        raise ParseError("missing order line", 1, name)
    try:
        n = int(lines[0].strip())
    except ValueError:
        raise ParseError(f"order {lines[0].strip()!r} is not an integer", 1, name) from None
    if n < 0:
        raise ParseError("negative order", 1, name)
    rows = lines[1:]
    while rows and not rows[-1].strip():
        rows.pop()
    if len(rows) != n:
        # point at the first missing or surplus row
        raise ParseError(f"expected {n} rows, found {len(rows)}", min(len(rows), n) + 2, name)
    out = np.empty((n, n))
    for i, row in enumerate(rows):
        fields = row.split()
        if len(fields) != n:
            raise ParseError(f"expected {n} values, found {len(fields)}", i + 2, name)
        try:
            out[i] = [float(f) for f in fields]
        except ValueError:
            raise ParseError("non-numeric value", i + 2, name) from None
    return out


def write_matrix(values: np.ndarray, path: str | os.PathLike) -> Path:
    return atomic_write(path, dumps_matrix(values))


def read_matrix(path: str | os.PathLike) -> np.ndarray:
    return loads_matrix(Path(path).read_text(encoding="utf-8"), str(path))


# ---------------------------------------------------------------------------
# CSV / TSV files
# ---------------------------------------------------------------------------

def _csv_text(rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def dumps_assignment(assignment: ClusterAssignment) -> str:
    return _csv_text((sid, assignment.labels[sid]) for sid in sorted(assignment.labels))


def loads_assignment(text: str, name: str | None = None) -> ClusterAssignment:
    labels = {}
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError("expected 'set_id,cluster_id'", lineno, name)
        try:
            labels[row[0]] = int(row[1])
        except ValueError:
            raise ParseError(f"cluster id {row[1]!r} is not an integer", lineno, name) from None
    return ClusterAssignment(labels, len(set(labels.values())))


def dumps_truth(truth: Mapping[str, str]) -> str:
    return _csv_text((sid, truth[sid]) for sid in sorted(truth))


def loads_truth(text: str, name: str | None = None) -> dict[str, str]:
    out = {}
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError("expected 'set_id,identity'", lineno, name)
        out[row[0]] = row[1]
    return out


def loads_pairs(text: str, name: str | None = None) -> list[tuple[str, str]]:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) != 2 or not all(f.strip() for f in fields):
            raise ParseError("expected 'set_a<TAB>set_b'", lineno, name)
        pairs.append((fields[0].strip(), fields[1].strip()))
    return pairs


def dumps_plotdata(delta_s: Sequence[float], delta_d: Sequence[float], median_s: float,
                   median_d: float) -> str:
    rows: list[Sequence[Any]] = [("series", "index", "value")]
    rows += [("delta_s", i, repr(float(v))) for i, v in enumerate(delta_s)]
    rows += [("delta_d", i, repr(float(v))) for i, v in enumerate(delta_d)]
    rows.append(("median_s", "", repr(float(median_s))))
    rows.append(("median_d", "", repr(float(median_d))))
    return _csv_text(rows)


def loads_plotdata(text: str) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    reader = csv.reader(io.StringIO(text))
    next(reader, None)
    for row in reader:
        if row:
            out.setdefault(row[0], []).append(float(row[2]))
    return out


def dumps_json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"
