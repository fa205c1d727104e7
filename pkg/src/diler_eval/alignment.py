"""Hypothesis alignment metrics computed from labelled model/reference pairs.

Every metric is a ratio of pair counts. A metric whose denominator is zero
is reported as ``None`` and left out of the benchmark-level mean, so a
compound with an empty hypothesis list does not drag averages toward zero.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, NamedTuple, Sequence

from .errors import InputError, RecordError
from .model import normalize_inchikey

log = logging.getLogger(__name__)

DEFAULT_PARTIAL_WEIGHT = 0.5


class AlignmentError(InputError):
    pass


class AlignmentLabel(str, enum.Enum):
    EXACT = "ExactMatch"
    PARTIAL = "PartialMatch"
    MODEL_ONLY = "HadesOnly"
    REFERENCE_ONLY = "DilerOnly"
    CONTRADICTION = "Contradiction"

    @property
    def two_sided(self) -> bool:
        return self in (AlignmentLabel.EXACT, AlignmentLabel.PARTIAL, AlignmentLabel.CONTRADICTION)


# strength used to resolve one hypothesis claimed by several pairs
_STRENGTH = {
    AlignmentLabel.EXACT: 3,
    AlignmentLabel.CONTRADICTION: 2,
    AlignmentLabel.PARTIAL: 1,
    AlignmentLabel.MODEL_ONLY: 0,
    AlignmentLabel.REFERENCE_ONLY: 0,
}


@dataclass(frozen=True)
class PairAlignment:
    model_index: int | None
    reference_index: int | None
    label: AlignmentLabel

    def __post_init__(self) -> None:
        has_m = self.model_index is not None
        has_r = self.reference_index is not None
        if self.label.two_sided:
            ok = has_m and has_r
        elif self.label is AlignmentLabel.MODEL_ONLY:
            ok = has_m and not has_r
        else:
            ok = has_r and not has_m
        if not ok:
            raise AlignmentError(
                f"{self.label.value} pair has model_index={self.model_index}, "
                f"reference_index={self.reference_index}"
            )


@dataclass(frozen=True)
class AlignmentTally:
    E: int
    P: int
    HO: int
    DO: int
    C: int
    H: int
    D: int
    w_P: float = DEFAULT_PARTIAL_WEIGHT
    auto_added: int = 0  # Only-pairs synthesized for hypotheses no pair mentioned

    def __post_init__(self) -> None:
        for name in ("E", "P", "HO", "DO", "C", "H", "D"):
            if getattr(self, name) < 0:
                raise AlignmentError(f"negative count {name}")
        if self.H != self.E + self.P + self.C + self.HO:
            raise AlignmentError(f"H={self.H} != E+P+C+HO")
        if self.D != self.E + self.P + self.C + self.DO:
            raise AlignmentError(f"D={self.D} != E+P+C+DO")
        if not 0.0 <= self.w_P <= 1.0:
            raise AlignmentError(f"partial-match weight {self.w_P} outside [0, 1]")

    @property
    def U(self) -> int:
        return self.E + self.P + self.HO + self.DO + self.C

    @property
    def M(self) -> int:
        return min(self.H, self.D)

    @classmethod
    def from_counts(cls, E: int = 0, P: int = 0, HO: int = 0, DO: int = 0, C: int = 0,
                    w_P: float = DEFAULT_PARTIAL_WEIGHT) -> AlignmentTally:
        return cls(E, P, HO, DO, C, H=E + P + C + HO, D=E + P + C + DO, w_P=w_P)


def resolve_one_to_one(pairs: Iterable[PairAlignment]) -> tuple[list[PairAlignment], list[str]]:
    """Make pairs one-to-one, keeping the strongest label per hypothesis.

    Strength order is Exact > Contradiction > Partial. A losing pair is
    dropped; its still-unpaired side is later counted as an Only pair by
    :func:`tally`.
    """
    indexed = list(enumerate(pairs))
    indexed.sort(key=lambda ip: (-_STRENGTH[ip[1].label], ip[0]))
    used_m: set[int] = set()
    used_r: set[int] = set()
    kept: list[tuple[int, PairAlignment]] = []
    warnings: list[str] = []
    for pos, p in indexed:
        m, r = p.model_index, p.reference_index
        clash = (m is not None and m in used_m) or (r is not None and r in used_r)
        if clash:
            warnings.append(
                f"dropped {p.label.value} pair (model={m}, reference={r}): index already aligned"
            )
            continue
        if m is not None:
            used_m.add(m)
        if r is not None:
            used_r.add(r)
        kept.append((pos, p))
    kept.sort(key=lambda ip: ip[0])
    for w in warnings:
        log.warning(w)
    return [p for _, p in kept], warnings


def tally(
    pairs: Sequence[PairAlignment],
    model_count: int,
    reference_count: int,
    w_P: float = DEFAULT_PARTIAL_WEIGHT,
) -> AlignmentTally:
    """Count labels, adding Only pairs for hypotheses that no pair mentions."""
    counts = {label: 0 for label in AlignmentLabel}
    used_m: set[int] = set()
    used_r: set[int] = set()
    for p in pairs:
        for idx, n, used, side in (
            (p.model_index, model_count, used_m, "model"),
            (p.reference_index, reference_count, used_r, "reference"),
        ):
            if idx is None:
                continue
            if not 0 <= idx < n:
                raise AlignmentError(f"{side} index {idx} out of range for {n} hypotheses")
            if idx in used:
                raise AlignmentError(f"{side} index {idx} used by more than one pair")
            used.add(idx)
        counts[p.label] += 1
    missing_m = model_count - len(used_m)
    missing_r = reference_count - len(used_r)
    return AlignmentTally(
        E=counts[AlignmentLabel.EXACT],
        P=counts[AlignmentLabel.PARTIAL],
        HO=counts[AlignmentLabel.MODEL_ONLY] + missing_m,
        DO=counts[AlignmentLabel.REFERENCE_ONLY] + missing_r,
        C=counts[AlignmentLabel.CONTRADICTION],
        H=model_count,
        D=reference_count,
        w_P=w_P,
        auto_added=missing_m + missing_r,
    )


def _ratio(num: float, den: float) -> float | None:
    return None if den == 0 else num / den


class SetSimilarity(NamedTuple):
    jaccard: float | None
    dice: float | None
    overlap: float | None
    fuzzy_jaccard: float | None


class PrecisionRecall(NamedTuple):
    precision: float | None
    recall: float | None
    f1: float | None


class ErrorRates(NamedTuple):
    contradiction_rate: float | None
    hallucination_rate: float | None
    miss_rate: float | None


def set_similarity(t: AlignmentTally) -> SetSimilarity:
    soft = t.E + t.w_P * t.P
    return SetSimilarity(
        jaccard=_ratio(t.E, t.U),
        dice=_ratio(2 * t.E, t.H + t.D),
        overlap=_ratio(t.E, t.M),
        fuzzy_jaccard=None if t.H + t.D == 0 else _ratio(soft, (t.H + t.D) - soft),
    )


def precision_recall_f1(t: AlignmentTally) -> PrecisionRecall:
    soft = t.E + t.w_P * t.P
    prec = _ratio(soft, t.E + t.P + t.HO + t.C)
    rec = _ratio(soft, t.E + t.P + t.DO + t.C)
    f1 = None
    if prec is not None and rec is not None and prec + rec > 0:
        f1 = 2 * prec * rec / (prec + rec)
    return PrecisionRecall(prec, rec, f1)


def error_rates(t: AlignmentTally) -> ErrorRates:
    return ErrorRates(_ratio(t.C, t.U), _ratio(t.HO, t.H), _ratio(t.DO, t.D))


@dataclass(frozen=True)
class AlignmentMetrics:
    jaccard: float | None = None
    dice: float | None = None
    overlap: float | None = None
    fuzzy_jaccard: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    contradiction_rate: float | None = None
    hallucination_rate: float | None = None
    miss_rate: float | None = None

    def as_dict(self) -> dict[str, float | None]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


METRIC_FIELDS: tuple[str, ...] = tuple(f.name for f in fields(AlignmentMetrics))

# Report column order: G-Eval first, then the ten pair-count metrics.
ALIGNMENT_COLUMNS: tuple[tuple[str, str], ...] = (
    ("g_eval", "G-Eval"),
    ("jaccard", "Jaccard"),
    ("dice", "Dice"),
    ("overlap", "Overlap"),
    ("fuzzy_jaccard", "Fuzzy Jaccard"),
    ("precision", "Precision"),
    ("recall", "Recall"),
    ("f1", "F1"),
    ("contradiction_rate", "Contr. Rate"),
    ("hallucination_rate", "Halluc. Rate"),
    ("miss_rate", "Miss Rate"),
)


def compute_metrics(t: AlignmentTally) -> AlignmentMetrics:
    return AlignmentMetrics(*set_similarity(t), *precision_recall_f1(t), *error_rates(t))


@dataclass(frozen=True)
class AlignmentSummary:
    """Macro average over compounds, with per-field support counts."""

    metrics: AlignmentMetrics
    support: dict[str, int]
    n: int
    g_eval: float | None = None

    def row(self) -> dict[str, float | None]:
        values = {"g_eval": self.g_eval, **self.metrics.as_dict()}
        return {key: values[key] for key, _ in ALIGNMENT_COLUMNS}


def _mean(values: Sequence[float | None]) -> tuple[float | None, int]:
    present = [v for v in values if v is not None]
    if not present:
        return None, 0
    return sum(present) / len(present), len(present)


def aggregate(
    per_compound: Sequence[AlignmentMetrics],
    g_eval: Sequence[float | None] | None = None,
) -> AlignmentSummary:
    if not per_compound:
        raise AlignmentError("cannot aggregate an empty list of compounds")
    means: dict[str, float | None] = {}
    support: dict[str, int] = {}
    for name in METRIC_FIELDS:
        means[name], support[name] = _mean([getattr(m, name) for m in per_compound])
    g_mean = None
    if g_eval is not None:
        g_mean, support["g_eval"] = _mean(g_eval)
    return AlignmentSummary(AlignmentMetrics(**means), support, len(per_compound), g_mean)


# --- alignment-record files -------------------------------------------------


@dataclass
class AlignmentRecord:
    inchikey: str
    model_count: int
    reference_count: int
    pairs: list[PairAlignment] = field(default_factory=list)


def label_from_wire(raw: str) -> AlignmentLabel:
    """Parse a label, tolerating spacing, case and separator variations.

    ``"Exact Match"``, ``"EXACT-MATCH"`` and ``"exact_match"`` all map to
    :attr:`AlignmentLabel.EXACT`; the tag spellings ``ONLY_IN_HADES`` and
    ``ONLY_IN_DILER`` are accepted for the two one-sided labels.
    """
    key = "".join(ch for ch in str(raw).upper() if ch.isalnum())
    label = _WIRE_LABELS.get(key)
    if label is None:
        raise AlignmentError(f"unknown alignment label {raw!r}")
    if raw != label.value:
        log.info("normalized alignment label %r -> %s", raw, label.value)
    return label


_WIRE_LABELS = {
    "EXACTMATCH": AlignmentLabel.EXACT,
    "EXACT": AlignmentLabel.EXACT,
    "PARTIALMATCH": AlignmentLabel.PARTIAL,
    "PARTIAL": AlignmentLabel.PARTIAL,
    "HADESONLY": AlignmentLabel.MODEL_ONLY,
    "ONLYINHADES": AlignmentLabel.MODEL_ONLY,
    "MODELONLY": AlignmentLabel.MODEL_ONLY,
    "DILERONLY": AlignmentLabel.REFERENCE_ONLY,
    "ONLYINDILER": AlignmentLabel.REFERENCE_ONLY,
    "REFERENCEONLY": AlignmentLabel.REFERENCE_ONLY,
    "CONTRADICTION": AlignmentLabel.CONTRADICTION,
}


def _opt_index(d: dict, *keys: str) -> int | None:
    for k in keys:
        if k in d and d[k] is not None:
            v = d[k]
            if isinstance(v, bool) or not isinstance(v, int):
                raise AlignmentError(f"{k} must be an integer, got {v!r}")
            return v
    return None


def pair_from_dict(d: dict) -> PairAlignment:
    if not isinstance(d, dict) or "label" not in d:
        raise AlignmentError("pair must be an object with a 'label'")
    return PairAlignment(
        _opt_index(d, "model_index", "hades_index"),
        _opt_index(d, "reference_index", "diler_index"),
        label_from_wire(d["label"]),
    )


def pair_to_dict(p: PairAlignment) -> dict[str, Any]:
    d: dict[str, Any] = {}
    if p.model_index is not None:
        d["model_index"] = p.model_index
    if p.reference_index is not None:
        d["reference_index"] = p.reference_index
    d["label"] = p.label.value
    return d


def parse_alignment_records(path: str | Path) -> list[AlignmentRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = AlignmentRecord(
                    normalize_inchikey(str(obj["inchikey"])),
                    int(obj["model_count"]),
                    int(obj["reference_count"]),
                    [pair_from_dict(p) for p in obj.get("pairs", [])],
                )
                tally(rec.pairs, rec.model_count, rec.reference_count)
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise RecordError(f"malformed alignment record: {exc}", record=lineno) from None
            except InputError as exc:
                raise RecordError(str(exc), record=lineno) from None
            out.append(rec)
    return out


def alignment_record_to_dict(rec: AlignmentRecord) -> dict[str, Any]:
    return {
        "inchikey": rec.inchikey,
        "model_count": rec.model_count,
        "reference_count": rec.reference_count,
        "pairs": [pair_to_dict(p) for p in rec.pairs],
    }
