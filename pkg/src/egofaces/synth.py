"""Synthetic face-set corpora with known identities.

Each identity is a centroid in descriptor space (or a base texture in patch
mode). A face-set is a handful of noisy samples of one identity inside one
sequence. Knobs control identity separation, how many sequences show two
people at once, deliberately confusable identity pairs, and how unbalanced
face-set sizes are.

Noise is isotropic with per-coordinate standard deviation
``intra_sigma / sqrt(descriptor_dim)``, so ``intra_sigma`` is the RMS
distance of an example from its centroid and ``inter_margin`` is measured in
the same units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, InfeasibleGeometry
from .model import Dataset, Detection, FaceExample, FaceSet, SequenceRecord

_PLACEMENT_TRIES = 20000


@dataclass(frozen=True)
class SynthConfig:
    num_identities: int = 20
    sets_per_identity: int = 5
    examples_per_set: tuple[int, int] = (5, 15)
    descriptor_dim: int = 16
    intra_sigma: float = 1.0
    inter_margin: float = 3.0
    cooccurrence_rate: float = 0.0
    confusable_pairs: int = 0
    # centroid distance of a confusable pair, in multiples of intra_sigma
    confusable_distance: float = 0.5
    # RMS radius of the centroid cloud, in multiples of inter_margin * intra_sigma
    centroid_spread: float = 1.5
    # identities get spreads log-uniform in intra_sigma * [1/sqrt(r), sqrt(r)]
    sigma_ratio: float = 1.0
    frames_per_sequence: tuple[int, int] = (10, 40)
    # "descriptor" or "patch"
    mode: str = "descriptor"
    patch_size: int = 32
    # consecutive frames per face-set (no gaps), so tracking can recover them exactly
    contiguous_frames: bool = False
    with_detections: bool = False
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.examples_per_set
        if self.num_identities < 1:
            raise ConfigError("num_identities must be >= 1")
        if self.sets_per_identity < 1:
            raise ConfigError("sets_per_identity must be >= 1")
        if lo < 1 or lo > hi:
            raise ConfigError(f"examples_per_set range {self.examples_per_set} is invalid")
        if self.inter_margin <= 0:
            raise ConfigError("inter_margin must be > 0")
        if self.intra_sigma < 0:
            raise ConfigError("intra_sigma must be >= 0")
        if not 0.0 <= self.cooccurrence_rate <= 1.0:
            raise ConfigError("cooccurrence_rate must lie in [0, 1]")
        if 2 * self.confusable_pairs > self.num_identities:
            raise ConfigError("not enough identities for the requested confusable pairs")
        if self.sigma_ratio < 1.0:
            raise ConfigError("sigma_ratio must be >= 1")
        if self.mode not in ("descriptor", "patch"):
            raise ConfigError(f"unknown synth mode {self.mode!r}")
        object.__setattr__(self, "examples_per_set", (int(lo), int(hi)))
        object.__setattr__(self, "frames_per_sequence", tuple(int(v) for v in self.frames_per_sequence))


def identity_name(k: int) -> str:
    return f"id{k:02d}"


def place_centroids(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """K centroids at least ``inter_margin * sigma`` apart.

    The first ``confusable_pairs`` odd-indexed identities are instead placed
    exactly ``confusable_distance * sigma`` from their even-indexed partner.
    """
    k, d = config.num_identities, config.descriptor_dim
    sigma = config.intra_sigma if config.intra_sigma > 0 else 1.0
    margin = config.inter_margin * config.intra_sigma
    spread = config.centroid_spread * config.inter_margin * sigma
    partner = {2 * p + 1: 2 * p for p in range(config.confusable_pairs)}
    centroids = np.zeros((k, d))
    for i in range(k):
        for _ in range(_PLACEMENT_TRIES):
            if i in partner:
                direction = rng.normal(size=d)
                direction /= np.linalg.norm(direction)
                cand = centroids[partner[i]] + direction * config.confusable_distance * config.intra_sigma
                others = [j for j in range(i) if j != partner[i]]
            else:
                cand = rng.normal(size=d) * spread / math.sqrt(d)
                others = list(range(i))
            if all(np.linalg.norm(cand - centroids[j]) >= margin for j in others):
                centroids[i] = cand
                break
        else:
            raise InfeasibleGeometry(
                f"could not place {k} centroids {margin:g} apart in {d} dimensions "
                f"(spread {spread:g}) within {_PLACEMENT_TRIES} tries")
    return centroids


def _base_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    tex = gaussian_filter(rng.normal(size=(size, size)), 2.0, mode="wrap")
    tex -= tex.min()
    tex /= max(tex.max(), 1e-12)
    return tex * 200.0 + 28.0


def _render_patch(texture: np.ndarray, size: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    margin = (texture.shape[0] - size) // 2
    dy, dx = rng.integers(-margin, margin + 1, size=2)
    crop = texture[margin + dy: margin + dy + size, margin + dx: margin + dx + size]
    gain = 1.0 + rng.normal(scale=0.1)
    bias = rng.normal(scale=10.0)
    noisy = crop * gain + bias + rng.normal(scale=10.0 * sigma, size=crop.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def _pair_sequences(config: SynthConfig, rng: np.random.Generator) -> list[list[tuple[int, int]]]:
    """Group (identity, set index) slots into sequences of one or two people."""
    k, s = config.num_identities, config.sets_per_identity
    slots = [(i, j) for i in range(k) for j in range(s)]
    used: set[tuple[int, int]] = set()
    sequences: list[list[tuple[int, int]]] = []
    # confusable partners always appear together
    for p in range(config.confusable_pairs):
        a, b = 2 * p, 2 * p + 1
        for j in range(s):
            sequences.append([(a, j), (b, j)])
            used.update({(a, j), (b, j)})

    total = k * s
    target_pairs = int(round(config.cooccurrence_rate * total / (1.0 + config.cooccurrence_rate)))
    free = [slot for slot in slots if slot not in used]
    order = rng.permutation(len(free))
    free = [free[i] for i in order]
    remaining = max(0, target_pairs - len(sequences))
    while remaining > 0 and len(free) >= 2:
        first = free.pop(0)
        mate = next((x for x in free if x[0] != first[0]), None)
        if mate is None:
            free.insert(0, first)
            break
        free.remove(mate)
        sequences.append([first, mate])
        remaining -= 1
    sequences.extend([slot] for slot in free)
    order = rng.permutation(len(sequences))
    return [sequences[i] for i in order]


def generate_dataset(config: SynthConfig, split: str | None = None) -> tuple[Dataset, dict[str, str]]:
    """Generate a labelled corpus; returns the dataset and ``set_id -> identity``.

    Fully determined by ``config.seed``.
    """
    rng = np.random.default_rng(config.seed)
    d = config.descriptor_dim
    size = config.patch_size
    if config.mode == "descriptor":
        centroids = place_centroids(config, rng)
        textures = None
    else:
        centroids = None
        textures = [_base_texture(rng, size + 8) for _ in range(config.num_identities)]
        for p in range(config.confusable_pairs):
            a, b = 2 * p, 2 * p + 1
            w = min(1.0, config.confusable_distance / max(config.inter_margin, 1e-12))
            textures[b] = (1.0 - w) * textures[a] + w * textures[b]
    spreads = np.full(config.num_identities, float(config.intra_sigma))
    if config.sigma_ratio > 1.0:
        half = 0.5 * math.log(config.sigma_ratio)
        spreads *= np.exp(rng.uniform(-half, half, size=config.num_identities))

    groups = _pair_sequences(config, rng)
    sequences, face_sets, truth = [], [], {}
    detections: dict[str, tuple[tuple[Detection, ...], ...]] = {}
    lo, hi = config.examples_per_set
    f_lo, f_hi = config.frames_per_sequence
    for q, members in enumerate(groups):
        seq_id = f"seq{q:03d}"
        lengths = [int(rng.integers(lo, hi + 1)) for _ in members]
        frame_count = max(max(lengths), int(rng.integers(f_lo, max(f_lo, f_hi) + 1)))
        set_ids = []
        per_frame: dict[int, list[Detection]] = {}
        for slot, (ident, _) in enumerate(members):
            n = lengths[slot]
            if config.contiguous_frames:
                start = int(rng.integers(0, frame_count - n + 1))
                frames = np.arange(start, start + n)
            else:
                frames = np.sort(rng.choice(frame_count, size=n, replace=False))
            set_id = f"{seq_id}/p{slot}"
            label = identity_name(ident)
            x0 = 40.0 + 200.0 * slot
            y0 = 60.0
            examples = []
            for f in frames:
                f = int(f)
                jitter = rng.normal(scale=2.0, size=2)
                bbox = (x0 + jitter[0], y0 + jitter[1], 64.0, 64.0)
                if centroids is not None:
                    desc = centroids[ident] + rng.normal(size=d) * spreads[ident] / math.sqrt(d)
                    patch = None
                else:
                    desc = None
                    patch = _render_patch(textures[ident], size, spreads[ident], rng)
                examples.append(FaceExample(f"{set_id}/f{f:03d}", seq_id, f, bbox, patch, desc, label))
                if config.with_detections:
                    per_frame.setdefault(f, []).append(Detection(f, bbox, patch, desc, label))
            face_sets.append(FaceSet(set_id, seq_id, tuple(examples)))
            set_ids.append(set_id)
            truth[set_id] = label
        sequences.append(SequenceRecord(seq_id, frame_count, tuple(set_ids)))
        if config.with_detections:
            detections[seq_id] = tuple(tuple(per_frame.get(f, ())) for f in range(frame_count))

    dataset = Dataset(
        sequences=tuple(sequences),
        face_sets=tuple(face_sets),
        descriptor_dim=d if config.mode == "descriptor" else None,
        split=split,
        detections=detections,
    )
    return dataset, truth


def calibration_config(config: SynthConfig) -> SynthConfig:
    """Same generator settings, independent seed (and hence new identities)."""
    seed = int(np.random.SeedSequence([config.seed, 0xCA1B]).generate_state(1)[0])
    return replace(config, seed=seed)


def generate_calibration_split(config: SynthConfig) -> tuple[Dataset, dict[str, str]]:
    return generate_dataset(calibration_config(config), split="train")
