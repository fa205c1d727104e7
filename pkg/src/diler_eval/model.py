"""Benchmark data model: compounds, severity grades, hypotheses, categories.

Also owns the two line-delimited JSON file formats the rest of the package
consumes: benchmark records (one compound + its reference hypotheses per
line) and prediction records (one compound score/severity per line).
"""

from __future__ import annotations

import enum
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from .errors import InputError, RecordError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

INCHIKEY_RE = re.compile(r"^[A-Z]{14}-[A-Z]{10}-[A-Z]$")

POSITIVE_CATEGORIES: tuple[str, ...] = (
    "Reactive Bioactivation",
    "Liver Cell Death",
    "Altered Proliferation or Regeneration",
    "Transport Function Disruption",
    "Oxidative Stress",
    "Immune-Mediated Liver Response",
    "Mitochondrial Dysfunction",
    "Stress Signaling Pathway Activation",
    "Cholestasis",
    "Cellular Cytoskeleton Disruption",
    "Fibrosis",
    "Liver Metabolism Disruption",
)

NEGATIVE_CATEGORIES: tuple[str, ...] = (
    "Metabolic Stability",
    "No Reactive Bioactivation",
    "Efficient Detoxification",
    "Rapid Clearance",
    "Efficient Hepatobiliary Efflux",
    "Low Intracellular Accumulation",
    "Preserved Redox Homeostasis",
    "Mitochondrial Sparing",
    "No Hapten Formation",
    "Preserved Bile Acid Homeostasis",
    "Adaptive Stress Tolerance",
    "Effective Repair",
)

# Reserved tag for third-party outputs naming a category outside the inventory.
UNCATEGORIZED = "Uncategorized"

MIN_STEPS, MAX_STEPS = 5, 7
MAX_MODEL_HYPOTHESES = 4

SPLITS = ("train", "test", "post2021")


class Polarity(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class Category:
    name: str
    polarity: Polarity | None  # None only for the reserved Uncategorized tag


CATEGORIES: dict[str, Category] = {
    **{n: Category(n, Polarity.POSITIVE) for n in POSITIVE_CATEGORIES},
    **{n: Category(n, Polarity.NEGATIVE) for n in NEGATIVE_CATEGORIES},
}
_CATEGORY_BY_FOLD = {n.casefold(): n for n in CATEGORIES}


class Severity(str, enum.Enum):
    """A-E likelihood grade; A is the highest risk."""

    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"


_SEVERITY_SCORE = {
    Severity.A: 1.0,
    Severity.B: 0.75,
    Severity.C: 0.5,
    Severity.D: 0.25,
    Severity.E: 0.0,
}


def severity_score(s: Severity | str) -> float:
    """Map a severity grade onto the ordinal score in [0, 1]."""
    return _SEVERITY_SCORE[Severity(s)]


def parse_severity(value: Any) -> Severity | None:
    if value is None:
        return None
    try:
        return Severity(str(value).strip().upper())
    except ValueError:
        raise InputError(f"unknown severity grade {value!r}") from None


class Direction(str, enum.Enum):
    HEPATOTOXIC = "Hepatotoxic"
    SAFE = "Safe"


class Confidence(str, enum.Enum):
    HIGH = "High"
    MEDIUM = "Medium"
    LOW = "Low"


def normalize_inchikey(raw: str) -> str:
    key = raw.strip().upper()
    if not INCHIKEY_RE.match(key):
        raise InputError(f"not a valid InChIKey: {raw!r}")
    return key


@dataclass(frozen=True)
class Compound:
    inchikey: str
    smiles: str
    binary_label: int
    severity: Severity | None = None
    split: str = "test"

    def __post_init__(self) -> None:
        if not INCHIKEY_RE.match(self.inchikey):
            raise InputError(f"not a normalized InChIKey: {self.inchikey!r}")
        if self.binary_label not in (0, 1):
            raise InputError(f"binary_label must be 0 or 1, got {self.binary_label!r}")
        if self.split not in SPLITS:
            raise InputError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class Hypothesis:
    title: str
    steps: tuple[str, ...]
    direction: Direction
    confidence: Confidence
    categories: tuple[str, ...]
    suggested_assay: str | None = None

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "direction", Direction(self.direction))
            object.__setattr__(self, "confidence", Confidence(self.confidence))
        except ValueError as exc:
            raise InputError(f"hypothesis {self.title!r}: {exc}") from None
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "categories", tuple(self.categories))


@dataclass(frozen=True)
class HypothesisSet:
    compound: Compound
    hypotheses: tuple[Hypothesis, ...]
    source: str = "reference"

    def __post_init__(self) -> None:
        if self.source not in ("reference", "model"):
            raise InputError(f"unknown hypothesis-set source {self.source!r}")

    def __len__(self) -> int:
        return len(self.hypotheses)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    level: str = "error"  # "error" or "warning"


def validate_hypothesis(h: Hypothesis, strict: bool = True) -> list[Violation]:
    """Check one hypothesis against the benchmark invariants.

    In lax mode an out-of-range step count is reported as a warning instead
    of an error; every other violation keeps its error level.
    """
    out: list[Violation] = []
    if not h.title.strip():
        out.append(Violation("empty-title", "hypothesis title is empty"))
    n = len(h.steps)
    if not MIN_STEPS <= n <= MAX_STEPS:
        out.append(
            Violation(
                "step-count",
                f"{h.title!r}: {n} steps, expected {MIN_STEPS}-{MAX_STEPS}",
                "error" if strict else "warning",
            )
        )
    if not h.categories:
        out.append(Violation("missing-category", f"{h.title!r}: no categories"))
    want = Polarity.POSITIVE if h.direction is Direction.HEPATOTOXIC else Polarity.NEGATIVE
    for name in h.categories:
        cat = CATEGORIES.get(name)
        if cat is None:
            if name != UNCATEGORIZED:
                out.append(Violation("unknown-category", f"{h.title!r}: unknown category {name!r}"))
            continue
        if cat.polarity is not want:
            out.append(
                Violation(
                    "polarity-mismatch",
                    f"{h.title!r}: category {name!r} is {cat.polarity.value} "
                    f"but direction is {h.direction.value}",
                )
            )
    return out


def validate_set(hset: HypothesisSet, strict: bool = True) -> list[Violation]:
    out: list[Violation] = []
    n = len(hset.hypotheses)
    if hset.source == "model" and not 1 <= n <= MAX_MODEL_HYPOTHESES:
        out.append(
            Violation(
                "set-size",
                f"model set for {hset.compound.inchikey} has {n} hypotheses, expected 1-4",
                "error" if strict else "warning",
            )
        )
    if hset.source == "reference" and n == 0:
        out.append(Violation("set-size", f"reference set for {hset.compound.inchikey} is empty"))
    for h in hset.hypotheses:
        out.extend(validate_hypothesis(h, strict))
    return out


# --- (de)serialization ------------------------------------------------------

_NUMBERED = re.compile(r"^\s*\d+[.)]\s+")


def _split_steps(value: Any) -> tuple[str, ...]:
    if isinstance(value, str):
        # free-text chain of thought: one numbered step per line
        lines = [ln.strip() for ln in value.splitlines() if ln.strip()]
        if len(lines) == 1:
            parts = re.split(r"\s+(?=\d+[.)]\s)", lines[0])
            lines = [p.strip() for p in parts if p.strip()]
        return tuple(lines)
    if isinstance(value, (list, tuple)):
        return tuple(str(s) for s in value)
    raise InputError("steps must be a list of strings")


def _canonical_category(name: str, strict: bool) -> str:
    canon = _CATEGORY_BY_FOLD.get(str(name).strip().casefold())
    if canon is not None:
        return canon
    if str(name).strip() == UNCATEGORIZED:
        return UNCATEGORIZED
    if strict:
        raise InputError(f"unknown category {name!r}")
    log.warning("mapping unknown category %r to %s", name, UNCATEGORIZED)
    return UNCATEGORIZED


def _first(d: dict, *keys: str, default: Any = None) -> Any:
    for k in keys:
        if k in d:
            return d[k]
    return default


def hypothesis_from_dict(d: dict, *, strict: bool = True) -> Hypothesis:
    """Build a hypothesis from its JSON form.

    Accepts both the benchmark field names and the field names used by the
    baseline LLM output schema (``chain_of_thought``, ``mechanism_direction``,
    ``confidence_level``).
    """
    if not isinstance(d, dict):
        raise InputError("hypothesis must be an object")
    title = _first(d, "title", "hypothesis_title", "hypothesis")
    if title is None:
        raise InputError("hypothesis missing 'title'")
    steps = _first(d, "steps", "chain_of_thought")
    if steps is None:
        raise InputError(f"hypothesis {title!r} missing 'steps'")
    try:
        direction = Direction(str(_first(d, "direction", "mechanism_direction", default="")).strip())
    except ValueError:
        raise InputError(f"hypothesis {title!r}: bad direction") from None
    try:
        confidence = Confidence(str(_first(d, "confidence", "confidence_level", default="")).strip())
    except ValueError:
        raise InputError(f"hypothesis {title!r}: bad confidence") from None
    raw_cats = _first(d, "categories", "mechanism_categories", default=[])
    if isinstance(raw_cats, str):
        raw_cats = [raw_cats]
    cats = tuple(_canonical_category(c, strict) for c in raw_cats)
    assay = _first(d, "suggested_assay")
    return Hypothesis(
        title=str(title),
        steps=_split_steps(steps),
        direction=direction,
        confidence=confidence,
        categories=cats,
        suggested_assay=None if assay is None else str(assay),
    )


def hypothesis_to_dict(h: Hypothesis) -> dict[str, Any]:
    d: dict[str, Any] = {
        "title": h.title,
        "steps": list(h.steps),
        "direction": h.direction.value,
        "confidence": h.confidence.value,
        "categories": list(h.categories),
    }
    if h.suggested_assay is not None:
        d["suggested_assay"] = h.suggested_assay
    return d


def compound_to_dict(c: Compound) -> dict[str, Any]:
    return {
        "inchikey": c.inchikey,
        "smiles": c.smiles,
        "binary_label": c.binary_label,
        "severity": None if c.severity is None else c.severity.value,
        "split": c.split,
    }


def record_to_dict(c: Compound, hset: HypothesisSet) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        **compound_to_dict(c),
        "hypotheses": [hypothesis_to_dict(h) for h in hset.hypotheses],
    }


def dumps_record(d: dict[str, Any]) -> str:
    return json.dumps(d, ensure_ascii=False, separators=(",", ":"))


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"invalid JSON: {exc.msg}", record=lineno) from None
            if not isinstance(obj, dict):
                raise RecordError("record must be an object", record=lineno)
            yield lineno, obj


def _compound_from_dict(obj: dict, lineno: int) -> Compound:
    for f in ("inchikey", "smiles", "binary_label"):
        if f not in obj:
            raise RecordError("missing required field", record=lineno, field=f)
    try:
        key = normalize_inchikey(str(obj["inchikey"]))
    except InputError as exc:
        raise RecordError(str(exc), record=lineno, field="inchikey") from None
    label = obj["binary_label"]
    if isinstance(label, bool) or label not in (0, 1):
        raise RecordError(f"binary_label must be 0 or 1, got {label!r}", record=lineno, field="binary_label")
    try:
        sev = parse_severity(obj.get("severity"))
    except InputError as exc:
        raise RecordError(str(exc), record=lineno, field="severity") from None
    split = obj.get("split", "test")
    if split not in SPLITS:
        raise RecordError(f"unknown split {split!r}", record=lineno, field="split")
    return Compound(key, str(obj["smiles"]), int(label), sev, split)


def parse_benchmark(path: str | Path, *, strict: bool = True) -> list[tuple[Compound, HypothesisSet]]:
    """Read a benchmark file, validating every record.

    Record order is preserved. Duplicate InChIKeys, unknown categories and
    (in strict mode) out-of-range step counts are rejected with the line
    number of the offending record.
    """
    out: list[tuple[Compound, HypothesisSet]] = []
    seen: dict[str, int] = {}
    for lineno, obj in _iter_jsonl(Path(path)):
        version = obj.get("schema_version")
        if version != SCHEMA_VERSION:
            raise RecordError(f"unsupported schema_version {version!r}", record=lineno, field="schema_version")
        compound = _compound_from_dict(obj, lineno)
        if compound.inchikey in seen:
            raise RecordError(
                f"duplicate compound {compound.inchikey} (first at record {seen[compound.inchikey]})",
                record=lineno,
                field="inchikey",
            )
        seen[compound.inchikey] = lineno
        raw_h = obj.get("hypotheses")
        if not isinstance(raw_h, list):
            raise RecordError("hypotheses must be a list", record=lineno, field="hypotheses")
        hyps = []
        for i, hd in enumerate(raw_h):
            try:
                hyps.append(hypothesis_from_dict(hd, strict=True))
            except InputError as exc:
                raise RecordError(str(exc), record=lineno, field=f"hypotheses[{i}]") from None
        hset = HypothesisSet(compound, tuple(hyps), "reference")
        errors = [v for v in validate_set(hset, strict) if v.level == "error"]
        if errors:
            raise RecordError(errors[0].message, record=lineno, field=errors[0].code)
        for v in validate_set(hset, strict):
            if v.level == "warning":
                log.warning("record %d: %s", lineno, v.message)
        out.append((compound, hset))
    return out


def serialize_benchmark(records: Iterable[tuple[Compound, HypothesisSet]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c, hset in records:
            fh.write(dumps_record(record_to_dict(c, hset)) + "\n")


@dataclass
class ModelOutput:
    """Hypotheses a model produced for one compound, before joining to the benchmark."""

    inchikey: str
    hypotheses: tuple[Hypothesis, ...]
    severity: Severity | None = None
    warnings: list[str] = field(default_factory=list)


def parse_model_outputs(path: str | Path, *, strict: bool = False) -> dict[str, ModelOutput]:
    """Read a model-output file: ``{inchikey, hypotheses|dili_hypotheses, severity?}`` per line.

    Validation defaults to warn-only since third-party baselines do not always
    respect the 5-7 step rule; unknown categories become ``Uncategorized``
    unless ``strict``.
    """
    out: dict[str, ModelOutput] = {}
    for lineno, obj in _iter_jsonl(Path(path)):
        if "inchikey" not in obj:
            raise RecordError("missing required field", record=lineno, field="inchikey")
        try:
            key = normalize_inchikey(str(obj["inchikey"]))
        except InputError as exc:
            raise RecordError(str(exc), record=lineno, field="inchikey") from None
        if key in out:
            raise RecordError(f"duplicate compound {key}", record=lineno, field="inchikey")
        raw_h = _first(obj, "hypotheses", "dili_hypotheses", default=[])
        if not isinstance(raw_h, list):
            raise RecordError("hypotheses must be a list", record=lineno, field="hypotheses")
        hyps = []
        warn_unknown: list[str] = []
        for i, hd in enumerate(raw_h):
            try:
                hyps.append(hypothesis_from_dict(hd, strict=strict))
            except InputError as exc:
                raise RecordError(str(exc), record=lineno, field=f"hypotheses[{i}]") from None
            raw_cats = _first(hd, "categories", "mechanism_categories", default=[])
            raw_cats = [raw_cats] if isinstance(raw_cats, str) else raw_cats
            unknown = [c for c in raw_cats
                       if str(c).strip().casefold() not in _CATEGORY_BY_FOLD and str(c).strip() != UNCATEGORIZED]
            if unknown:
                warn_unknown.append(f"{key}: unknown categories {unknown} mapped to {UNCATEGORIZED}")
        try:
            sev = parse_severity(_first(obj, "severity", "dili_classification"))
        except InputError as exc:
            raise RecordError(str(exc), record=lineno, field="severity") from None
        warnings = warn_unknown
        n = len(hyps)
        if not 1 <= n <= MAX_MODEL_HYPOTHESES:
            if strict:
                raise RecordError(f"{n} hypotheses, expected 1-4", record=lineno, field="hypotheses")
            warnings.append(f"{key}: {n} hypotheses, expected 1-4")
        for h in hyps:
            for v in validate_hypothesis(h, strict):
                if v.level == "error" and strict:
                    raise RecordError(v.message, record=lineno, field=v.code)
                warnings.append(f"{key}: {v.message}")
        out[key] = ModelOutput(key, tuple(hyps), sev, warnings)
    return out


def model_output_to_dict(m: ModelOutput) -> dict[str, Any]:
    d: dict[str, Any] = {"inchikey": m.inchikey, "hypotheses": [hypothesis_to_dict(h) for h in m.hypotheses]}
    if m.severity is not None:
        d["severity"] = m.severity.value
    return d


# --- predictions ------------------------------------------------------------

SCORE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PredictionRecord:
    inchikey: str
    score: float | None = None
    severity: Severity | None = None

    def __post_init__(self) -> None:
        if self.score is None and self.severity is None:
            raise InputError(f"{self.inchikey}: prediction needs a score or a severity")
        if self.score is not None and not (0.0 <= self.score <= 1.0 and math.isfinite(self.score)):
            raise InputError(f"{self.inchikey}: score {self.score!r} outside [0, 1]")

    @property
    def effective_score(self) -> float:
        if self.score is not None:
            return self.score
        assert self.severity is not None
        return severity_score(self.severity)

    @property
    def score_mismatch(self) -> bool:
        """True when both fields are present but disagree."""
        if self.score is None or self.severity is None:
            return False
        return abs(self.score - severity_score(self.severity)) > SCORE_TOLERANCE


def parse_predictions(path: str | Path) -> list[PredictionRecord]:
    out: list[PredictionRecord] = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(Path(path)):
        if "inchikey" not in obj:
            raise RecordError("missing required field", record=lineno, field="inchikey")
        try:
            key = normalize_inchikey(str(obj["inchikey"]))
            sev = parse_severity(obj.get("severity"))
            score = obj.get("score")
            if score is not None:
                if isinstance(score, bool) or not isinstance(score, (int, float)):
                    raise InputError(f"score must be a number, got {score!r}")
                score = float(score)
            rec = PredictionRecord(key, score, sev)
        except InputError as exc:
            raise RecordError(str(exc), record=lineno) from None
        if key in seen:
            raise RecordError(f"duplicate compound {key}", record=lineno, field="inchikey")
        seen.add(key)
        if rec.score_mismatch:
            log.warning("record %d: score %.6g disagrees with severity %s", lineno, rec.score, rec.severity.value)
        out.append(rec)
    return out


def serialize_predictions(records: Sequence[PredictionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            d: dict[str, Any] = {"inchikey": r.inchikey}
            if r.score is not None:
                d["score"] = r.score
            if r.severity is not None:
                d["severity"] = r.severity.value
            fh.write(dumps_record(d) + "\n")
