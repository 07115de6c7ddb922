"""Pairwise face-example similarity in [0, 1].

Three interchangeable matchers share one contract, ``Δ(x, y) ∈ [0, 1]`` and
symmetric:

* ``quad_patch``: a desk-scale stand-in for deep-matching. Images are resized,
  tiled into patches, and every patch quadrant searches the other image
  independently with normalized cross-correlation.
* ``descriptor``: similarity between fixed-length face descriptors.
* ``precomputed``: scores read from an external score table (TSV).
"""

from __future__ import annotations

import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.spatial.distance import cdist
from skimage.transform import resize

from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyImage,
    MatcherFailure,
    MissingPair,
    ParseError,
    ScoreOutOfRange,
    ZeroVector,
)
from .model import FaceExample

MATCHER_KINDS = ("quad_patch", "descriptor", "precomputed")
DESCRIPTOR_METRICS = ("cosine_sim", "inv_euclidean")

# Below this sum of squared deviations a quadrant counts as constant.
_FLAT_EPS = 1e-9


@dataclass(frozen=True)
class MatcherConfig:
    kind: str = "descriptor"
    patch_size: int = 64
    grid: int = 4
    search_radius: int = 4
    descriptor_metric: str = "inv_euclidean"
    score_table_path: str | None = None

    def __post_init__(self):
        if self.kind not in MATCHER_KINDS:
            raise ConfigError(f"unknown matcher kind {self.kind!r}; expected one of {MATCHER_KINDS}")
        if self.descriptor_metric not in DESCRIPTOR_METRICS:
            raise ConfigError(f"unknown descriptor metric {self.descriptor_metric!r}")
        if self.grid < 1 or self.patch_size < 2 or self.patch_size % (2 * self.grid):
            raise ConfigError(
                f"patch_size={self.patch_size} must be divisible by 2*grid={2 * self.grid}")
        if self.search_radius < 0:
            raise ConfigError("search_radius must be >= 0")
        if self.kind == "precomputed" and not self.score_table_path:
            raise ConfigError("precomputed matcher needs score_table_path")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "patch_size": self.patch_size,
            "grid": self.grid,
            "search_radius": self.search_radius,
            "descriptor_metric": self.descriptor_metric,
            "score_table_path": self.score_table_path,
        }


# ---------------------------------------------------------------------------
# Quadrant patch matcher
# ---------------------------------------------------------------------------

def _prepare(image, size: int) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise EmptyImage(f"image must be a non-empty 2-D grid, got shape {arr.shape}")
    if arr.shape != (size, size):
        arr = resize(arr, (size, size), order=1, mode="edge", preserve_range=True,
                     anti_aliasing=None)
    return arr


def _displacements(radius: int) -> np.ndarray:
    """All (dy, dx) in the search window, smallest displacement first."""
    rng = range(-radius, radius + 1)
    disp = [(dy, dx) for dy in rng for dx in rng]
    disp.sort(key=lambda d: (d[0] ** 2 + d[1] ** 2, abs(d[0]), abs(d[1]), d[0], d[1]))
    return np.array(disp, dtype=np.int64).reshape(-1, 2)


def quadrant_scores(src: np.ndarray, tgt: np.ndarray, grid: int, radius: int) -> np.ndarray:
    """Best NCC score of every quadrant of ``src`` searched in ``tgt``.

    Both inputs must already be square and the same size. Returns an array of
    shape ``(grid, grid, 4)``: one row per patch, the four quadrant scores
    mapped from [-1, 1] to [0, 1].
    """
    size = src.shape[0]
    q = size // (2 * grid)
    n = 2 * grid
    # (n, n, q*q): quadrant blocks on a 2*grid lattice
    quads = src.reshape(n, q, n, q).transpose(0, 2, 1, 3).reshape(n, n, q * q)
    quads = quads - quads.mean(axis=-1, keepdims=True)
    quad_ss = np.einsum("abk,abk->ab", quads, quads)

    padded = np.pad(tgt, radius, mode="constant", constant_values=np.nan)
    windows = sliding_window_view(padded, (q, q))
    disp = _displacements(radius)
    origins = np.arange(n) * q + radius
    ys = origins[:, None, None] + disp[None, None, :, 0]     # (n, 1, D)
    xs = origins[None, :, None] + disp[None, None, :, 1]     # (1, n, D)
    cand = windows[ys, xs].reshape(n, n, len(disp), q * q)   # (n, n, D, q*q)

    valid = ~np.isnan(cand).any(axis=-1)
    cand = np.where(valid[..., None], cand, 0.0)
    cand = cand - cand.mean(axis=-1, keepdims=True)
    cand_ss = np.einsum("abdk,abdk->abd", cand, cand)
    cross = np.einsum("abk,abdk->abd", quads, cand)

    denom = np.sqrt(quad_ss[..., None] * cand_ss)
    flat = (quad_ss[..., None] <= _FLAT_EPS) | (cand_ss <= _FLAT_EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        ncc = np.where(flat, 0.0, cross / np.where(flat, 1.0, denom))
    score = np.clip((np.clip(ncc, -1.0, 1.0) + 1.0) / 2.0, 0.0, 1.0)
    score = np.where(valid, score, -np.inf)
    best = score.max(axis=-1)
    best[quad_ss <= _FLAT_EPS] = 0.5

    # regroup the lattice into (patch_y, patch_x, quadrant)
    return best.reshape(grid, 2, grid, 2).transpose(0, 2, 1, 3).reshape(grid, grid, 4)


def directional_quad_match(a: np.ndarray, b: np.ndarray, grid: int, radius: int) -> float:
    per_patch = quadrant_scores(a, b, grid, radius).mean(axis=-1)
    return float(per_patch.mean())


def quad_patch_match(a, b, config: MatcherConfig | None = None) -> float:
    """Symmetric quadrant-patch similarity of two grayscale images in [0, 1]."""
    config = config or MatcherConfig(kind="quad_patch")
    pa = _prepare(a, config.patch_size)
    pb = _prepare(b, config.patch_size)
    ab = directional_quad_match(pa, pb, config.grid, config.search_radius)
    ba = directional_quad_match(pb, pa, config.grid, config.search_radius)
    return float(min(1.0, max(0.0, (ab + ba) / 2.0)))


# ---------------------------------------------------------------------------
# Descriptor similarity
# ---------------------------------------------------------------------------

def descriptor_similarity(a, b, metric: str = "cosine_sim") -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionMismatch(f"descriptor lengths differ: {a.shape[0]} vs {b.shape[0]}")
    if metric == "cosine_sim":
        na = math.sqrt(float(np.dot(a, a)))
        nb = math.sqrt(float(np.dot(b, b)))
        if na == 0.0 or nb == 0.0:
            raise ZeroVector("cosine similarity is undefined for a zero vector")
        cos = min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb)))
        return (1.0 + cos) / 2.0
    if metric == "inv_euclidean":
        return 1.0 / (1.0 + float(np.linalg.norm(a - b)))
    raise ValueError(f"unknown descriptor metric {metric!r}")


def descriptor_similarity_matrix(xs: np.ndarray, ys: np.ndarray, metric: str) -> np.ndarray:
    """Vectorized ``descriptor_similarity`` between two stacks of descriptors."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if xs.shape[1] != ys.shape[1]:
        raise DimensionMismatch(f"descriptor lengths differ: {xs.shape[1]} vs {ys.shape[1]}")
    if metric == "cosine_sim":
        nx = np.linalg.norm(xs, axis=1)
        ny = np.linalg.norm(ys, axis=1)
        if (nx == 0).any() or (ny == 0).any():
            raise ZeroVector("cosine similarity is undefined for a zero vector")
        cos = np.clip((xs / nx[:, None]) @ (ys / ny[:, None]).T, -1.0, 1.0)
        return (1.0 + cos) / 2.0
    if metric == "inv_euclidean":
        return 1.0 / (1.0 + cdist(xs, ys, "euclidean"))
    raise ValueError(f"unknown descriptor metric {metric!r}")


# ---------------------------------------------------------------------------
# Score tables
# ---------------------------------------------------------------------------

def _key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class ScoreTable:
    """Externally computed scores keyed by unordered example-id pairs."""

    def __init__(self, entries: dict[tuple[str, str], float] | None = None):
        self._entries: dict[tuple[str, str], float] = {}
        for (a, b), score in (entries or {}).items():
            score = float(score)
            if not (0.0 <= score <= 1.0):
                raise ScoreOutOfRange(f"score {score} for ({a}, {b}) outside [0, 1]")
            self._entries[_key(a, b)] = score

    @property
    def entries(self) -> dict[tuple[str, str], float]:
        return dict(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, pair) -> bool:
        return _key(*pair) in self._entries

    def lookup(self, a: str, b: str) -> float:
        try:
            return self._entries[_key(a, b)]
        except KeyError:
            raise MissingPair(f"no score for pair ({a!r}, {b!r})") from None


def load_score_table(source: BinaryIO | bytes | str | os.PathLike, name: str | None = None) -> ScoreTable:
    """Parse a score table: ``id_a<TAB>id_b<TAB>score`` per line, '#' comments.

    ``source`` may be raw bytes, a binary stream, or a path.
    """
    if isinstance(source, (str, os.PathLike)):
        name = name or os.fspath(source)
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8: {exc}", source=name) from None

    entries: dict[tuple[str, str], float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = raw.rstrip("\r\n").split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", lineno, name)
        a, b, text_score = (f.strip() for f in fields)
        if not a or not b:
            raise ParseError("empty example id", lineno, name)
        try:
            score = float(text_score)
        except ValueError:
            raise ParseError(f"score {text_score!r} is not a number", lineno, name) from None
        if not math.isfinite(score) or not (0.0 <= score <= 1.0):
            raise ScoreOutOfRange(f"line {lineno}: score {text_score} outside [0, 1]")
        key = _key(a, b)
        if key in entries and entries[key] != score:
            raise ParseError(f"conflicting duplicate score for pair {key}", lineno, name)
        entries[key] = score
    return ScoreTable(entries)


def dump_score_table(table: ScoreTable, stream: io.TextIOBase) -> None:
    for (a, b), score in sorted(table.entries.items()):
        stream.write(f"{a}\t{b}\t{score!r}\n")


# ---------------------------------------------------------------------------
# Matcher objects
# ---------------------------------------------------------------------------

class Matcher:
    """Scores face-example pairs. Subclasses implement ``_score``."""

    name = "matcher"

    def _score(self, x: FaceExample, y: FaceExample) -> float:
        raise NotImplementedError

    def score(self, x: FaceExample, y: FaceExample) -> float:
        try:
            value = float(self._score(x, y))
        except MatcherFailure:
            raise
        except Exception as exc:
            raise MatcherFailure(f"{type(exc).__name__}: {exc}", (x.example_id, y.example_id)) from exc
        if not (0.0 <= value <= 1.0):
            raise MatcherFailure(f"score {value} outside [0, 1]", (x.example_id, y.example_id))
        return value

    __call__ = score

    def block(self, xs: Sequence[FaceExample], ys: Sequence[FaceExample]) -> np.ndarray:
        """Score matrix with rows ``xs`` and columns ``ys``."""
        out = np.empty((len(xs), len(ys)))
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                out[i, j] = self.score(x, y)
        return out

    def similarity_matrix(self, examples: Sequence[FaceExample], parallelism: int = 1) -> np.ndarray:
        """Exactly symmetric all-pairs matrix; the diagonal is set to 1.

        Each unordered pair is scored once. Rows are distributed over a thread
        pool when ``parallelism`` != 1, but the result is assembled by index so
        it does not depend on completion order.
        """
        n = len(examples)
        out = np.ones((n, n))

        def row(i: int) -> np.ndarray:
            return np.array([self.score(examples[i], examples[j]) for j in range(i + 1, n)])

        workers = resolve_parallelism(parallelism)
        if workers == 1 or n < 3:
            rows = [row(i) for i in range(n)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(row, range(n)))
        for i, values in enumerate(rows):
            out[i, i + 1:] = values
            out[i + 1:, i] = values
        return out


def resolve_parallelism(parallelism: int) -> int:
    if parallelism is None or parallelism <= 0:
        return max(1, os.cpu_count() or 1)
    return int(parallelism)


class DescriptorMatcher(Matcher):
    def __init__(self, metric: str = "inv_euclidean"):
        if metric not in DESCRIPTOR_METRICS:
            raise ConfigError(f"unknown descriptor metric {metric!r}")
        self.metric = metric
        self.name = f"descriptor:{metric}"

    def _stack(self, examples: Iterable[FaceExample]) -> np.ndarray:
        rows = []
        for ex in examples:
            if ex.descriptor is None:
                raise MatcherFailure("face-example has no descriptor", (ex.example_id, ex.example_id))
            rows.append(ex.descriptor)
        return np.vstack(rows)

    def _score(self, x, y):
        if x.descriptor is None or y.descriptor is None:
            raise MatcherFailure("face-example has no descriptor", (x.example_id, y.example_id))
        return descriptor_similarity(x.descriptor, y.descriptor, self.metric)

    def block(self, xs, ys):
        try:
            return descriptor_similarity_matrix(self._stack(xs), self._stack(ys), self.metric)
        except (DimensionMismatch, ZeroVector) as exc:
            raise MatcherFailure(str(exc)) from exc

    def similarity_matrix(self, examples, parallelism=1):
        m = self.block(examples, examples)
        m = (m + m.T) / 2.0
        np.fill_diagonal(m, 1.0)
        return m


class QuadPatchMatcher(Matcher):
    def __init__(self, config: MatcherConfig | None = None):
        self.config = config or MatcherConfig(kind="quad_patch")
        self.name = "quad_patch"

    def _score(self, x, y):
        if x.patch is None or y.patch is None:
            raise MatcherFailure("face-example has no patch", (x.example_id, y.example_id))
        return quad_patch_match(x.patch, y.patch, self.config)


class TableMatcher(Matcher):
    def __init__(self, table: ScoreTable):
        self.table = table
        self.name = "precomputed"

    def _score(self, x, y):
        try:
            return self.table.lookup(x.example_id, y.example_id)
        except MissingPair as exc:
            raise MatcherFailure(str(exc), (x.example_id, y.example_id)) from exc


class ConstantMatcher(Matcher):
    """Returns the same score for every pair; useful for tests and dry runs."""

    def __init__(self, value: float):
        self.value = float(value)
        self.name = f"constant:{value}"

    def _score(self, x, y):
        return self.value


def make_matcher(config: MatcherConfig) -> Matcher:
    if config.kind == "descriptor":
        return DescriptorMatcher(config.descriptor_metric)
    if config.kind == "quad_patch":
        return QuadPatchMatcher(config)
    return TableMatcher(load_score_table(config.score_table_path))
