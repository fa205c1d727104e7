"""Energy-distance retrieval over per-atom embedding sets.

A molecule is a variable-length set of d-dimensional atom vectors. Two sets
are compared with the squared energy distance

    E_p^2(X, Y) = 2 mean ||x - y||^p - mean ||x - x'||^p - mean ||y - y'||^p

where every mean runs over all ordered pairs, self-pairs included (the
V-statistic form), so ``E_p^2(X, X) == 0`` exactly. ``unbiased=True``
drops the self-pairs from the two within-set means instead.

Retrieval is an exact flat scan; within-set terms of the corpus are cached
at construction.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InputError

DEFAULT_P = 0.5
DEFAULT_K = 10

MAGIC = b"DEMB"
FORMAT_VERSION = 1
LABEL_ABSENT = 255


class DimensionError(InputError):
    pass


@dataclass(frozen=True, eq=False)
class AtomEmbeddingSet:
    id: str
    vectors: np.ndarray  # (M, d) float64
    label: int | None = None

    def __post_init__(self) -> None:
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InputError(f"{self.id}: vectors must be a non-empty (M, d) matrix, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise InputError(f"{self.id}: non-finite embedding values")
        if self.label not in (None, 0, 1):
            raise InputError(f"{self.id}: label must be 0, 1 or absent")
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def size(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class DistanceParams:
    p: float = DEFAULT_P
    unbiased: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.p <= 2.0:
            raise InputError(f"exponent p must lie in (0, 2], got {self.p}")


@dataclass(frozen=True)
class RetrievalHit:
    id: str
    label: int | None
    distance: float


def _powered(X: np.ndarray, Y: np.ndarray, p: float) -> np.ndarray:
    d = cdist(X, Y)
    if p == 1.0:
        return d
    if p == 0.5:
        return np.sqrt(d)
    return d**p


def _within(X: np.ndarray, params: DistanceParams) -> float:
    d = _powered(X, X, params.p)
    m = X.shape[0]
    if not params.unbiased:
        return float(d.mean())
    if m < 2:
        return 0.0
    # diagonal is exactly zero, so the full sum is the off-diagonal sum
    return float(d.sum() / (m * (m - 1)))


def _cross(X: np.ndarray, Y: np.ndarray, params: DistanceParams) -> float:
    return float(_powered(X, Y, params.p).mean())


def _check_dims(X: AtomEmbeddingSet, Y: AtomEmbeddingSet) -> None:
    if X.dim != Y.dim:
        raise DimensionError(f"dimension mismatch: {X.id} has d={X.dim}, {Y.id} has d={Y.dim}")


def energy_sq(X: AtomEmbeddingSet, Y: AtomEmbeddingSet, params: DistanceParams = DistanceParams()) -> float:
    """Squared energy distance; may be slightly negative from rounding."""
    _check_dims(X, Y)
    return 2.0 * _cross(X.vectors, Y.vectors, params) - _within(X.vectors, params) - _within(Y.vectors, params)


def distance(X: AtomEmbeddingSet, Y: AtomEmbeddingSet, params: DistanceParams = DistanceParams()) -> float:
    return clip_sqrt(energy_sq(X, Y, params))


def clip_sqrt(e2: float) -> float:
    return math.sqrt(max(0.0, e2))


def _rank(hits: Iterable[RetrievalHit], k: int) -> list[RetrievalHit]:
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    return sorted(hits, key=lambda h: (h.distance, h.id))[:k]


class EnergyIndex:
    """Flat exact index; caches each entry's within-set term."""

    def __init__(self, corpus: Sequence[AtomEmbeddingSet], params: DistanceParams = DistanceParams()):
        if not corpus:
            raise InputError("corpus is empty")
        dims = {e.dim for e in corpus}
        if len(dims) != 1:
            raise DimensionError(f"corpus mixes dimensions {sorted(dims)}")
        ids = [e.id for e in corpus]
        if len(set(ids)) != len(ids):
            raise InputError("corpus ids must be unique")
        self.entries = list(corpus)
        self.params = params
        self.dim = dims.pop()
        self._self_terms = [_within(e.vectors, params) for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def energies(self, query: AtomEmbeddingSet) -> np.ndarray:
        if query.dim != self.dim:
            raise DimensionError(f"dimension mismatch: query {query.id} has d={query.dim}, corpus has d={self.dim}")
        q_self = _within(query.vectors, self.params)
        return np.array(
            [
                2.0 * _cross(query.vectors, e.vectors, self.params) - q_self - s
                for e, s in zip(self.entries, self._self_terms)
            ]
        )

    def top_k(self, query: AtomEmbeddingSet, k: int = DEFAULT_K) -> list[RetrievalHit]:
        e2 = self.energies(query)
        hits = (RetrievalHit(e.id, e.label, clip_sqrt(v)) for e, v in zip(self.entries, e2))
        return _rank(hits, k)


def top_k(
    query: AtomEmbeddingSet,
    corpus: Sequence[AtomEmbeddingSet],
    k: int = DEFAULT_K,
    params: DistanceParams = DistanceParams(),
) -> list[RetrievalHit]:
    """The ``k`` nearest corpus entries by energy distance, ties broken by id."""
    return EnergyIndex(corpus, params).top_k(query, k)


def _pooled(e: AtomEmbeddingSet) -> np.ndarray:
    v = e.vectors.mean(axis=0)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise InputError(f"{e.id}: mean-pooled vector has zero norm")
    return v / norm


def cosine_distance(X: AtomEmbeddingSet, Y: AtomEmbeddingSet) -> float:
    _check_dims(X, Y)
    return float(1.0 - np.clip(_pooled(X) @ _pooled(Y), -1.0, 1.0))


def baseline_cosine(query: AtomEmbeddingSet, corpus: Sequence[AtomEmbeddingSet], k: int = DEFAULT_K) -> list[RetrievalHit]:
    """Rank by cosine distance between mean-pooled atom vectors."""
    if not corpus:
        raise InputError("corpus is empty")
    return _rank((RetrievalHit(e.id, e.label, cosine_distance(query, e)) for e in corpus), k)


@dataclass(frozen=True)
class Fingerprint:
    id: str
    label: int | None
    bits: int
    nbits: int

    def __post_init__(self) -> None:
        if self.bits < 0 or self.bits.bit_length() > self.nbits:
            raise InputError(f"{self.id}: bitset wider than {self.nbits} bits")

    @classmethod
    def from_hex(cls, id: str, label: int | None, hex_bits: str, nbits: int | None = None) -> Fingerprint:
        hex_bits = hex_bits.strip().lower()
        if hex_bits.startswith("0x"):
            hex_bits = hex_bits[2:]
        try:
            value = int(hex_bits, 16) if hex_bits else 0
        except ValueError:
            raise InputError(f"{id}: invalid hex bitset") from None
        return cls(id, label, value, nbits if nbits is not None else 4 * len(hex_bits))

    @classmethod
    def from_bitstring(cls, id: str, label: int | None, s: str) -> Fingerprint:
        """Leftmost character is bit 0, e.g. ``"1100"``."""
        return cls(id, label, sum(1 << i for i, ch in enumerate(s) if ch == "1"), len(s))


def tanimoto_distance(a: Fingerprint, b: Fingerprint) -> float:
    if a.nbits != b.nbits:
        raise DimensionError(f"bitset length mismatch: {a.id} has {a.nbits}, {b.id} has {b.nbits}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 0.0
    return 1.0 - (a.bits & b.bits).bit_count() / union


def baseline_tanimoto(query: Fingerprint, corpus: Sequence[Fingerprint], k: int = DEFAULT_K) -> list[RetrievalHit]:
    """Rank by Tanimoto distance on externally supplied fingerprints."""
    if not corpus:
        raise InputError("corpus is empty")
    return _rank((RetrievalHit(f.id, f.label, tanimoto_distance(query, f)) for f in corpus), k)


# --- file formats -----------------------------------------------------------
#
# Binary layout, little-endian:
#   header: 4s magic "DEMB", u16 version, u32 d, u32 entry_count
#   entry:  u16 id_len, id bytes (utf-8), u8 label (0/1/255=absent), u32 M, M*d f32

_HEADER = struct.Struct("<4sHII")
_ENTRY_HEAD = struct.Struct("<H")
_ENTRY_TAIL = struct.Struct("<BI")


def write_embeddings(entries: Sequence[AtomEmbeddingSet], path: str | Path) -> None:
    dims = {e.dim for e in entries}
    if len(dims) > 1:
        raise DimensionError(f"entries mix dimensions {sorted(dims)}")
    d = dims.pop() if dims else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, d, len(entries)))
        for e in entries:
            raw_id = e.id.encode("utf-8")
            fh.write(_ENTRY_HEAD.pack(len(raw_id)))
            fh.write(raw_id)
            fh.write(_ENTRY_TAIL.pack(LABEL_ABSENT if e.label is None else e.label, e.size))
            fh.write(e.vectors.astype("<f4").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise InputError("truncated embedding file")
    return buf


def read_embeddings(path: str | Path) -> list[AtomEmbeddingSet]:
    path = Path(path)
    if path.suffix in (".jsonl", ".json"):
        return read_embeddings_jsonl(path)
    with open(path, "rb") as fh:
        magic, version, d, count = _HEADER.unpack(_read_exact(fh, _HEADER.size))
        if magic != MAGIC:
            raise InputError(f"{path}: not an embedding file (bad magic)")
        if version != FORMAT_VERSION:
            raise InputError(f"{path}: unsupported format version {version}")
        out = []
        for _ in range(count):
            (n_id,) = _ENTRY_HEAD.unpack(_read_exact(fh, _ENTRY_HEAD.size))
            id_ = _read_exact(fh, n_id).decode("utf-8")
            label, m = _ENTRY_TAIL.unpack(_read_exact(fh, _ENTRY_TAIL.size))
            if label not in (0, 1, LABEL_ABSENT):
                raise InputError(f"{path}: entry {id_!r} has invalid label byte {label}")
            vec = np.frombuffer(_read_exact(fh, 4 * m * d), dtype="<f4").reshape(m, d)
            out.append(AtomEmbeddingSet(id_, vec.astype(np.float64), None if label == LABEL_ABSENT else label))
        if fh.read(1):
            raise InputError(f"{path}: trailing bytes after {count} entries")
    return out


def read_embeddings_jsonl(path: str | Path) -> list[AtomEmbeddingSet]:
    """Text twin of the binary format: ``{id, label, vectors: [[...], ...]}`` per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(AtomEmbeddingSet(str(obj["id"]), np.asarray(obj["vectors"], dtype=np.float64), obj.get("label")))
            except (KeyError, ValueError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: malformed embedding record ({exc})") from None
    return out


def write_embeddings_jsonl(entries: Sequence[AtomEmbeddingSet], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            obj = {"id": e.id, "label": e.label, "vectors": e.vectors.tolist()}
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def read_fingerprints(path: str | Path) -> list[Fingerprint]:
    """``{id, label, bits: hex, nbits?}`` per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(Fingerprint.from_hex(str(obj["id"]), obj.get("label"), str(obj["bits"]), obj.get("nbits")))
            except (KeyError, ValueError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: malformed fingerprint record ({exc})") from None
    return out
