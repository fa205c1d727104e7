"""Recognition audit: check claimed molecule names against synonym tables.

Each compound lands in exactly one bucket (not recognized, recognized
correctly, recognized incorrectly), and classification or alignment
metrics can then be broken down per bucket.
"""

from __future__ import annotations

import enum
import json
import string
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import httpx

from .alignment import AlignmentMetrics, AlignmentSummary, aggregate
from .classification import (
    DEFAULT_THRESHOLD,
    BinaryConfusion,
    BinaryMetrics,
    SingleClassError,
    binarize,
    binary_metrics,
    roc_auc,
)
from .errors import InputError, RecordError
from .model import Compound, PredictionRecord, normalize_inchikey


class Bucket(str, enum.Enum):
    NOT_RECOGNIZED = "NotRecognized"
    RECOGNIZED_CORRECTLY = "RecognizedCorrectly"
    RECOGNIZED_INCORRECTLY = "RecognizedIncorrectly"


BUCKET_LABELS = {
    Bucket.NOT_RECOGNIZED: "Not Recognized",
    Bucket.RECOGNIZED_CORRECTLY: "Recognized Correctly",
    Bucket.RECOGNIZED_INCORRECTLY: "Recognized Incorrectly",
}


class MissingSynonymsError(InputError):
    pass


_EDGE_PUNCT = "".join(sorted(set(string.punctuation) | {"“", "”", "‘", "’", "«", "»"}))


def normalize_name(raw: str, strip_suffixes: Sequence[str] = ()) -> str:
    """NFKC, case-fold, collapse whitespace, strip surrounding punctuation.

    ``strip_suffixes`` (e.g. ``("hydrochloride",)``) are removed from the end
    of the name when given; nothing is stripped by default.
    """
    s = unicodedata.normalize("NFKC", raw).casefold()
    s = " ".join(s.split())
    s = s.strip(_EDGE_PUNCT + " ")
    for suffix in strip_suffixes:
        suf = " " + normalize_name(suffix)
        if s.endswith(suf):
            s = s[: -len(suf)].rstrip(_EDGE_PUNCT + " ")
    return s


@dataclass(frozen=True)
class RecognitionClaim:
    inchikey: str
    claimed_name: str | None = None

    def __post_init__(self) -> None:
        if self.claimed_name is not None and not normalize_name(self.claimed_name):
            raise InputError(f"{self.inchikey}: claimed name is empty after normalization")


@dataclass
class SynonymTable:
    entries: dict[str, frozenset[str]]
    strip_suffixes: tuple[str, ...] = ()

    @classmethod
    def build(cls, raw: Mapping[str, Iterable[str]], strip_suffixes: Sequence[str] = ()) -> SynonymTable:
        entries = {}
        for key, names in raw.items():
            norm = frozenset(n for n in (normalize_name(x, strip_suffixes) for x in names) if n)
            if not norm:
                raise InputError(f"{key}: empty synonym set")
            entries[normalize_inchikey(key)] = norm
        return cls(entries, tuple(strip_suffixes))

    def __contains__(self, key: str) -> bool:
        return key in self.entries


def bucket(claim: RecognitionClaim, table: SynonymTable) -> Bucket:
    if claim.claimed_name is None:
        return Bucket.NOT_RECOGNIZED
    synonyms = table.entries.get(claim.inchikey)
    if synonyms is None:
        raise MissingSynonymsError(f"{claim.inchikey}: no synonyms available, cannot verify claim")
    name = normalize_name(claim.claimed_name, table.strip_suffixes)
    return Bucket.RECOGNIZED_CORRECTLY if name in synonyms else Bucket.RECOGNIZED_INCORRECTLY


@dataclass
class BucketDistribution:
    counts: dict[Bucket, int]
    missing: list[str] = field(default_factory=list)  # claims that could not be verified

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def percentages(self) -> dict[Bucket, float]:
        n = self.total
        return {b: (round(100.0 * c / n, 1) if n else 0.0) for b, c in self.counts.items()}


def assign_buckets(
    claims: Sequence[RecognitionClaim], table: SynonymTable
) -> tuple[dict[str, Bucket], list[str]]:
    assigned: dict[str, Bucket] = {}
    missing = []
    for c in claims:
        try:
            assigned[c.inchikey] = bucket(c, table)
        except MissingSynonymsError:
            missing.append(c.inchikey)
    return assigned, missing


def bucket_distribution(claims: Sequence[RecognitionClaim], table: SynonymTable) -> BucketDistribution:
    assigned, missing = assign_buckets(claims, table)
    counts = {b: 0 for b in Bucket}
    for b in assigned.values():
        counts[b] += 1
    return BucketDistribution(counts, missing)


@dataclass
class BucketRow:
    name: str
    n: int
    roc_auc: float | None
    confusion: BinaryConfusion
    metrics: BinaryMetrics

    def row(self) -> dict[str, float | None]:
        m = self.metrics
        return {
            "roc_auc": self.roc_auc,
            "balanced_accuracy": m.balanced_accuracy,
            "mcc": m.mcc,
            "sensitivity": m.sensitivity,
            "specificity": m.specificity,
            "f1": m.f1,
        }


def _bucket_row(name: str, pairs: Sequence[tuple[float, int]], threshold: float) -> BucketRow:
    scores = [s for s, _ in pairs]
    labels = [y for _, y in pairs]
    try:
        auc = roc_auc(scores, labels)
    except SingleClassError:
        auc = None
    conf = BinaryConfusion.from_predictions([binarize(s, threshold) for s in scores], labels)
    return BucketRow(name, len(pairs), auc, conf, binary_metrics(conf))


def per_bucket_metrics(
    claims: Sequence[RecognitionClaim],
    table: SynonymTable,
    predictions: Sequence[PredictionRecord],
    compounds: Sequence[Compound],
    threshold: float = DEFAULT_THRESHOLD,
) -> tuple[BucketRow, list[BucketRow]]:
    """Aggregate row plus one classification row per non-empty bucket.

    Only compounds with a bucket, a prediction and a reference label count;
    the aggregate row covers the union of the bucket populations.
    """
    assigned, _ = assign_buckets(claims, table)
    preds = {p.inchikey: p for p in predictions}
    labels = {c.inchikey: c.binary_label for c in compounds}
    per: dict[Bucket, list[tuple[float, int]]] = {b: [] for b in Bucket}
    for key, b in assigned.items():
        if key in preds and key in labels:
            per[b].append((preds[key].effective_score, labels[key]))
    union = [x for b in Bucket for x in per[b]]
    agg = _bucket_row("Aggregate", union, threshold)
    rows = [_bucket_row(BUCKET_LABELS[b], per[b], threshold) for b in Bucket if per[b]]
    return agg, rows


def per_bucket_alignment(
    claims: Sequence[RecognitionClaim],
    table: SynonymTable,
    metrics: Mapping[str, AlignmentMetrics],
    g_eval: Mapping[str, float | None] | None = None,
) -> list[tuple[str, AlignmentSummary]]:
    """Macro-averaged alignment metrics per bucket."""
    assigned, _ = assign_buckets(claims, table)
    out = []
    for b in Bucket:
        keys = [k for k, v in assigned.items() if v is b and k in metrics]
        if not keys:
            continue
        ge = [g_eval.get(k) for k in keys] if g_eval is not None else None
        out.append((BUCKET_LABELS[b], aggregate([metrics[k] for k in keys], ge)))
    return out


# --- files and lookup -------------------------------------------------------


def parse_claims(path: str | Path) -> list[RecognitionClaim]:
    out = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key = normalize_inchikey(str(obj["inchikey"]))
                name = obj.get("claimed_name")
                claim = RecognitionClaim(key, None if name is None else str(name))
            except (KeyError, json.JSONDecodeError) as exc:
                raise RecordError(f"malformed claim: {exc}", record=lineno) from None
            except InputError as exc:
                raise RecordError(str(exc), record=lineno) from None
            if key in seen:
                raise RecordError(f"duplicate compound {key}", record=lineno, field="inchikey")
            seen.add(key)
            out.append(claim)
    return out


def read_synonym_cache(path: str | Path, strip_suffixes: Sequence[str] = ()) -> SynonymTable:
    """``{inchikey, synonyms: [...], fetched_at}`` per line."""
    raw: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                raw[normalize_inchikey(str(obj["inchikey"]))] = [str(s) for s in obj["synonyms"]]
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise RecordError(f"malformed synonym record: {exc}", record=lineno) from None
    try:
        return SynonymTable.build(raw, strip_suffixes)
    except InputError as exc:
        raise RecordError(str(exc)) from None


PUBCHEM_SYNONYMS_URL = "https://pubchem.ncbi.nlm.nih.gov/rest/pug/compound/inchikey/{key}/synonyms/JSON"


class SynonymClient:
    """Fetches synonyms over HTTP and appends them to a local cache file.

    Audits themselves only ever read the cache, so a run is reproducible
    from the cache file alone.
    """

    def __init__(self, cache_path: str | Path, *, url: str = PUBCHEM_SYNONYMS_URL,
                 client: httpx.Client | None = None, clock=None):
        self.cache_path = Path(cache_path)
        self.url = url
        self._client = client or httpx.Client(timeout=30.0)
        self._clock = clock

    def _cached_keys(self) -> set[str]:
        if not self.cache_path.exists():
            return set()
        with open(self.cache_path, encoding="utf-8") as fh:
            return {json.loads(ln)["inchikey"] for ln in fh if ln.strip()}

    def fetch(self, key: str) -> list[str]:
        resp = self._client.get(self.url.format(key=key))
        if resp.status_code == 404:
            return []
        resp.raise_for_status()
        info = resp.json().get("InformationList", {}).get("Information", [])
        names: list[str] = []
        for item in info:
            names.extend(item.get("Synonym", []))
        return names

    def update(self, keys: Iterable[str]) -> list[str]:
        """Fetch keys missing from the cache; returns keys with no synonyms found."""
        from datetime import datetime, timezone

        have = self._cached_keys()
        not_found = []
        with open(self.cache_path, "a", encoding="utf-8") as fh:
            for key in sorted(set(keys) - have):
                names = self.fetch(key)
                if not names:
                    not_found.append(key)
                    continue
                now = self._clock() if self._clock else datetime.now(timezone.utc).isoformat()
                fh.write(json.dumps({"inchikey": key, "synonyms": names, "fetched_at": now}) + "\n")
        return not_found

