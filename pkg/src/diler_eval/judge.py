"""LLM-judge integration: prompt rendering, wire contract, retries, mock judge.

The judge is reached over a minimal HTTP contract so any gateway can sit
behind it. Request bodies are JSON objects::

    {"kind": "geval", "model_name": ..., "temperature": ..., "criteria": ...,
     "threshold": ..., "input": ..., "actual_output": ..., "expected_output": ...}
    {"kind": "pairwise", "model_name": ..., "temperature": ..., "prompt": ...}

and responses are ``{"score": float}`` for G-Eval or the four-field pairwise
object (``pairwise_alignments``, ``summary``, ``edited_model_output``,
``edited_reference_output``). Pair indices on the wire are 0-based.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable, Protocol, Sequence, TypeVar

import httpx

from .alignment import (
    AlignmentError,
    AlignmentLabel,
    PairAlignment,
    pair_from_dict,
    resolve_one_to_one,
    tally,
)
from .errors import InputError
from .model import (
    Compound,
    Hypothesis,
    HypothesisSet,
    hypothesis_from_dict,
    hypothesis_to_dict,
)

log = logging.getLogger(__name__)

ENV_ENDPOINT = "DILER_JUDGE_ENDPOINT"
ENV_TOKEN = "DILER_JUDGE_TOKEN"
ENV_HEADER = "DILER_JUDGE_AUTH_HEADER"

DEFAULT_MODEL = "gemini-3-flash-preview"

TEMPLATES = {
    "geval": "geval_v1.txt",
    "pairwise": "pairwise_v1.txt",
    "llm_system": "llm_system_v1.txt",
    "llm_user": "llm_user_v1.txt",
    "txgemma_chat": "txgemma_chat_v1.txt",
    "txgemma_reasoning": "txgemma_reasoning_v1.txt",
    "name_extraction": "name_extraction_v1.txt",
}

PAIRWISE_FIELDS = ("pairwise_alignments", "summary", "edited_model_output", "edited_reference_output")
_FIELD_ALIASES = {
    "edited_model_output": ("edited_model_output", "edited_hades_output"),
    "edited_reference_output": ("edited_reference_output", "edited_diler_output"),
}

TAGS: dict[str, AlignmentLabel] = {
    "[EXACT MATCH]": AlignmentLabel.EXACT,
    "[PARTIAL MATCH]": AlignmentLabel.PARTIAL,
    "[ONLY_IN_HADES]": AlignmentLabel.MODEL_ONLY,
    "[ONLY_IN_DILER]": AlignmentLabel.REFERENCE_ONLY,
    "[CONTRADICTION]": AlignmentLabel.CONTRADICTION,
}
_TAG_RE = re.compile("|".join(re.escape(t) for t in TAGS))


class JudgeError(Exception):
    """The judge could not produce a usable answer."""


class TransientJudgeError(JudgeError):
    """Worth retrying: connection failure, 5xx, 429."""


class JudgeTimeout(TransientJudgeError):
    pass


class RetriesExhausted(JudgeError):
    def __init__(self, attempts: int, last: Exception):
        self.attempts = attempts
        self.last = last
        super().__init__(f"judge failed after {attempts} attempts: {last}")


class MalformedScore(JudgeError):
    pass


class MalformedResponse(JudgeError, InputError):
    pass


class MissingFieldError(MalformedResponse):
    pass


@dataclass(frozen=True)
class JudgeConfig:
    endpoint: str | None = None
    model_name: str = DEFAULT_MODEL
    temperature: float = 0.0
    geval_threshold: float = 0.5
    max_parallel: int = 4
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.geval_threshold <= 1.0:
            raise InputError(f"geval_threshold {self.geval_threshold} outside [0, 1]")
        if self.max_retries < 1 or self.max_parallel < 1:
            raise InputError("max_retries and max_parallel must be >= 1")

    @classmethod
    def from_env(cls, **overrides: Any) -> JudgeConfig:
        if overrides.get("endpoint") is None:
            overrides["endpoint"] = os.environ.get(ENV_ENDPOINT)
        return cls(**overrides)


def load_template(name: str) -> str:
    filename = TEMPLATES.get(name, name)
    return resources.files("diler_eval").joinpath("templates", filename).read_text(encoding="utf-8")


def hypotheses_json(hset: HypothesisSet | Sequence[Hypothesis]) -> str:
    """Canonical JSON serialization of a hypothesis list."""
    hyps = hset.hypotheses if isinstance(hset, HypothesisSet) else hset
    return json.dumps([hypothesis_to_dict(h) for h in hyps], ensure_ascii=False, indent=2)


def _check_same_compound(c: Compound, *sets: HypothesisSet) -> None:
    for s in sets:
        if s.compound.inchikey != c.inchikey:
            raise InputError(f"hypothesis set belongs to {s.compound.inchikey}, not {c.inchikey}")


def substitute(template: str, values: dict[str, str]) -> str:
    """Single-pass ``{name}`` substitution.

    Inserted values are never rescanned, so braces inside a SMILES string
    survive verbatim. Every placeholder in the template must be supplied.
    """
    names = set(re.findall(r"\{(\w+)\}", template))
    missing = names - values.keys()
    if missing:
        raise KeyError(f"unsubstituted placeholders: {sorted(missing)}")
    return re.sub(r"\{(\w+)\}", lambda m: values[m.group(1)], template)


@dataclass(frozen=True)
class GEvalCase:
    input: str
    actual_output: str
    expected_output: str

    def __post_init__(self) -> None:
        for name in ("input", "actual_output", "expected_output"):
            if not getattr(self, name):
                raise InputError(f"G-Eval case field {name} is empty")


def render_geval_case(c: Compound, model: HypothesisSet, reference: HypothesisSet) -> GEvalCase:
    _check_same_compound(c, model, reference)
    context = {"inchikey": c.inchikey, "smiles": c.smiles, "binary_label": c.binary_label}
    return GEvalCase(
        input=json.dumps(context, ensure_ascii=False),
        actual_output=hypotheses_json(model),
        expected_output=hypotheses_json(reference),
    )


def render_pairwise_prompt(c: Compound, model: HypothesisSet, reference: HypothesisSet) -> str:
    _check_same_compound(c, model, reference)
    return substitute(
        load_template("pairwise"),
        {
            "inchikey": c.inchikey,
            "smiles": c.smiles,
            "label": str(c.binary_label),
            "HADES_hypotheses": hypotheses_json(model),
            "DILER_hypotheses": hypotheses_json(reference),
        },
    )


_CONTEXT_RE = re.compile(r"^- (InChIKey|SMILES|Dataset label): (.*)$", re.M)


def extract_pairwise_context(prompt: str) -> dict[str, str]:
    """Recover the compound context lines from a rendered pairwise prompt."""
    found = {}
    for m in _CONTEXT_RE.finditer(prompt):
        found.setdefault(m.group(1), m.group(2))
    return {"inchikey": found["InChIKey"], "smiles": found["SMILES"], "label": found["Dataset label"]}


def render_baseline_prompts(smiles: str) -> dict[str, str]:
    """System/user prompts for the tool-less LLM baselines plus the TxGemma chat prompt."""
    return {
        "system": load_template("llm_system"),
        "user": substitute(load_template("llm_user"), {"smiles": smiles}),
        "txgemma_chat": substitute(load_template("txgemma_chat"), {"smiles": smiles}),
        "txgemma_reasoning": load_template("txgemma_reasoning"),
    }


def render_name_extraction_prompt(reasoning: str) -> str:
    return substitute(load_template("name_extraction"), {"reasoning": reasoning})


def parse_name_extraction(raw: dict | str) -> str | None:
    obj = json.loads(raw) if isinstance(raw, str) else raw
    if not isinstance(obj, dict) or "claimed_name" not in obj:
        raise MissingFieldError("name-extraction response lacks 'claimed_name'")
    name = obj["claimed_name"]
    if name is None or not str(name).strip():
        return None
    return str(name).strip()


# --- pairwise responses -----------------------------------------------------


@dataclass
class PairwiseJudgeResponse:
    pairs: list[PairAlignment]
    summary: str
    edited_model_output: str
    edited_reference_output: str
    model_tags: list[AlignmentLabel] = field(default_factory=list)
    reference_tags: list[AlignmentLabel] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def extract_tags(text: str) -> list[AlignmentLabel]:
    return [TAGS[m.group(0)] for m in _TAG_RE.finditer(text)]


def parse_pairwise_response(
    raw: dict | str,
    model_count: int | None = None,
    reference_count: int | None = None,
) -> PairwiseJudgeResponse:
    """Validate a pairwise judge response.

    All four top-level fields must be present (empty values are fine). When
    hypothesis counts are given, indices are range-checked and many-to-one
    pairings are resolved so the result always tallies cleanly.
    """
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedResponse(f"response is not JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise MalformedResponse("response must be an object")
    values: dict[str, Any] = {}
    for name in PAIRWISE_FIELDS:
        for alias in _FIELD_ALIASES.get(name, (name,)):
            if alias in raw:
                values[name] = raw[alias]
                break
        else:
            raise MissingFieldError(f"response missing required field {name!r}")
    if not isinstance(values["pairwise_alignments"], list):
        raise MalformedResponse("pairwise_alignments must be a list")
    for name in PAIRWISE_FIELDS[1:]:
        if values[name] is None:
            values[name] = ""
        if not isinstance(values[name], str):
            raise MalformedResponse(f"{name} must be a string")
    try:
        pairs = [pair_from_dict(p) for p in values["pairwise_alignments"]]
    except AlignmentError as exc:
        raise MalformedResponse(str(exc)) from None
    warnings: list[str] = []
    if model_count is not None and reference_count is not None:
        for p in pairs:
            if p.model_index is not None and not 0 <= p.model_index < model_count:
                raise MalformedResponse(f"model index {p.model_index} out of range ({model_count} hypotheses)")
            if p.reference_index is not None and not 0 <= p.reference_index < reference_count:
                raise MalformedResponse(
                    f"reference index {p.reference_index} out of range ({reference_count} hypotheses)"
                )
        pairs, warnings = resolve_one_to_one(pairs)
        tally(pairs, model_count, reference_count)  # sanity: must not raise
    return PairwiseJudgeResponse(
        pairs=pairs,
        summary=values["summary"],
        edited_model_output=values["edited_model_output"],
        edited_reference_output=values["edited_reference_output"],
        model_tags=extract_tags(values["edited_model_output"]),
        reference_tags=extract_tags(values["edited_reference_output"]),
        warnings=warnings,
    )


# --- judges -----------------------------------------------------------------


class Judge(Protocol):
    def geval(self, case: GEvalCase, cfg: JudgeConfig) -> Any: ...

    def pairwise(self, prompt: str, model: HypothesisSet, reference: HypothesisSet, cfg: JudgeConfig) -> Any: ...


class HttpJudge:
    """Judge reached over the JSON-over-HTTP contract in the module docstring."""

    def __init__(self, cfg: JudgeConfig, *, client: httpx.Client | None = None, token: str | None = None):
        if not cfg.endpoint:
            raise InputError(f"no judge endpoint configured (set --judge-endpoint or {ENV_ENDPOINT})")
        self.endpoint = cfg.endpoint
        headers = {}
        token = token if token is not None else os.environ.get(ENV_TOKEN)
        if token:
            headers[os.environ.get(ENV_HEADER, "Authorization")] = token
        self._client = client or httpx.Client(timeout=cfg.timeout)
        self._headers = headers

    def _post(self, body: dict, cfg: JudgeConfig) -> Any:
        try:
            resp = self._client.post(self.endpoint, json=body, headers=self._headers, timeout=cfg.timeout)
        except httpx.TimeoutException as exc:
            raise JudgeTimeout(f"judge timed out after {cfg.timeout}s") from exc
        except httpx.TransportError as exc:
            raise TransientJudgeError(f"judge unreachable: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientJudgeError(f"judge returned HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise JudgeError(f"judge rejected request: HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError:
            raise MalformedResponse("judge response is not JSON") from None

    def geval(self, case: GEvalCase, cfg: JudgeConfig) -> Any:
        return self._post(geval_request(case, cfg), cfg)

    def pairwise(self, prompt: str, model: HypothesisSet, reference: HypothesisSet, cfg: JudgeConfig) -> Any:
        return self._post(pairwise_request(prompt, cfg), cfg)


def geval_request(case: GEvalCase, cfg: JudgeConfig) -> dict[str, Any]:
    """Wire body for a G-Eval call: rubric text plus the three case fields."""
    return {
        "kind": "geval",
        "model_name": cfg.model_name,
        "temperature": cfg.temperature,
        "criteria": load_template("geval"),
        "threshold": cfg.geval_threshold,
        "input": case.input,
        "actual_output": case.actual_output,
        "expected_output": case.expected_output,
    }


def pairwise_request(prompt: str, cfg: JudgeConfig) -> dict[str, Any]:
    return {"kind": "pairwise", "model_name": cfg.model_name, "temperature": cfg.temperature, "prompt": prompt}


# Opposing positive/negative categories; lets the mock judge detect a
# contradiction even though the two inventories share no tag.
OPPOSING_CATEGORIES: dict[str, str] = {
    "Reactive Bioactivation": "No Reactive Bioactivation",
    "Mitochondrial Dysfunction": "Mitochondrial Sparing",
    "Oxidative Stress": "Preserved Redox Homeostasis",
    "Cholestasis": "Preserved Bile Acid Homeostasis",
    "Transport Function Disruption": "Efficient Hepatobiliary Efflux",
    "Liver Metabolism Disruption": "Metabolic Stability",
    "Immune-Mediated Liver Response": "No Hapten Formation",
    "Stress Signaling Pathway Activation": "Adaptive Stress Tolerance",
    "Liver Cell Death": "Effective Repair",
}
OPPOSING_CATEGORIES.update({v: k for k, v in list(OPPOSING_CATEGORIES.items())})


def _themes(h: Hypothesis) -> set[str]:
    out = set(h.categories)
    out.update(OPPOSING_CATEGORIES[c] for c in h.categories if c in OPPOSING_CATEGORIES)
    return out


def mock_align(model: Sequence[Hypothesis], reference: Sequence[Hypothesis]) -> list[PairAlignment]:
    """Deterministic stand-in for the pairwise judge.

    Greedy passes in fixed priority: equal titles (case-folded) are an exact
    match; opposite directions over shared or opposing categories are a
    contradiction; same direction with shared categories is a partial match.
    Whatever is left becomes a one-sided pair.
    """
    used_m: set[int] = set()
    used_r: set[int] = set()
    pairs: list[PairAlignment] = []

    def sweep(label: AlignmentLabel, test: Callable[[Hypothesis, Hypothesis], bool]) -> None:
        for i, hm in enumerate(model):
            if i in used_m:
                continue
            for j, hr in enumerate(reference):
                if j not in used_r and test(hm, hr):
                    used_m.add(i)
                    used_r.add(j)
                    pairs.append(PairAlignment(i, j, label))
                    break

    sweep(AlignmentLabel.EXACT, lambda a, b: a.title.casefold() == b.title.casefold())
    sweep(AlignmentLabel.CONTRADICTION, lambda a, b: a.direction != b.direction and bool(_themes(a) & _themes(b)))
    sweep(AlignmentLabel.PARTIAL, lambda a, b: a.direction == b.direction and bool(set(a.categories) & set(b.categories)))
    pairs.extend(PairAlignment(i, None, AlignmentLabel.MODEL_ONLY) for i in range(len(model)) if i not in used_m)
    pairs.extend(PairAlignment(None, j, AlignmentLabel.REFERENCE_ONLY) for j in range(len(reference)) if j not in used_r)
    return pairs


_WIRE_NAMES = {
    AlignmentLabel.EXACT: "Exact Match",
    AlignmentLabel.PARTIAL: "Partial Match",
    AlignmentLabel.MODEL_ONLY: "HADES Only",
    AlignmentLabel.REFERENCE_ONLY: "DILER Only",
    AlignmentLabel.CONTRADICTION: "Contradiction",
}
_MODEL_TAG = {v: k for k, v in TAGS.items() if v is not AlignmentLabel.REFERENCE_ONLY}
_REF_TAG = {v: k for k, v in TAGS.items() if v is not AlignmentLabel.MODEL_ONLY}


def _edited(hyps: Sequence[Hypothesis], labels: dict[int, AlignmentLabel], tags: dict) -> str:
    return "\n".join(f"{tags[labels[i]]} {h.title}" for i, h in enumerate(hyps))


class MockJudge:
    """Offline deterministic judge with the same interface as :class:`HttpJudge`."""

    def geval(self, case: GEvalCase, cfg: JudgeConfig) -> dict:
        model = [hypothesis_from_dict(d, strict=False) for d in json.loads(case.actual_output)]
        ref = [hypothesis_from_dict(d, strict=False) for d in json.loads(case.expected_output)]
        if not model and not ref:
            return {"score": 1.0}
        t = tally(mock_align(model, ref), len(model), len(ref))
        return {"score": 2 * (t.E + t.w_P * t.P) / (t.H + t.D)}

    def pairwise(self, prompt: str, model: HypothesisSet, reference: HypothesisSet, cfg: JudgeConfig) -> dict:
        pairs = mock_align(model.hypotheses, reference.hypotheses)
        m_labels = {p.model_index: p.label for p in pairs if p.model_index is not None}
        r_labels = {p.reference_index: p.label for p in pairs if p.reference_index is not None}
        counts = {label: 0 for label in AlignmentLabel}
        for p in pairs:
            counts[p.label] += 1
        summary = ", ".join(f"{counts[label]} {_WIRE_NAMES[label]}" for label in AlignmentLabel)
        wire = []
        for p in pairs:
            d: dict[str, Any] = {"hades_index": p.model_index, "diler_index": p.reference_index}
            d["label"] = _WIRE_NAMES[p.label]
            wire.append(d)
        return {
            "pairwise_alignments": wire,
            "summary": summary,
            "edited_hades_output": _edited(model.hypotheses, m_labels, _MODEL_TAG),
            "edited_diler_output": _edited(reference.hypotheses, r_labels, _REF_TAG),
        }


T = TypeVar("T")


def with_retries(call: Callable[[], T], cfg: JudgeConfig, sleep: Callable[[float], None] = time.sleep) -> T:
    """Retry transient failures with exponential backoff.

    If every attempt timed out the final :class:`JudgeTimeout` is raised as
    is; any other mix of transient failures ends in :class:`RetriesExhausted`.
    """
    errors: list[TransientJudgeError] = []
    for attempt in range(cfg.max_retries):
        try:
            return call()
        except TransientJudgeError as exc:
            errors.append(exc)
            log.warning("judge attempt %d/%d failed: %s", attempt + 1, cfg.max_retries, exc)
            if attempt + 1 < cfg.max_retries:
                sleep(cfg.backoff * 2**attempt)
    if all(isinstance(e, JudgeTimeout) for e in errors):
        raise errors[-1]
    raise RetriesExhausted(len(errors), errors[-1])


@dataclass(frozen=True)
class GEvalResult:
    score: float
    passed: bool


def _parse_score(raw: Any) -> float:
    value = raw.get("score") if isinstance(raw, dict) else raw
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedScore(f"judge returned a non-numeric score: {value!r}")
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise MalformedScore(f"judge score {value} outside [0, 1]; check the judge configuration")
    return value


def run_geval(
    case: GEvalCase,
    cfg: JudgeConfig,
    judge: Judge,
    sleep: Callable[[float], None] = time.sleep,
) -> GEvalResult:
    score = _parse_score(with_retries(lambda: judge.geval(case, cfg), cfg, sleep))
    return GEvalResult(score, score >= cfg.geval_threshold)


def run_pairwise(
    c: Compound,
    model: HypothesisSet,
    reference: HypothesisSet,
    cfg: JudgeConfig,
    judge: Judge,
    sleep: Callable[[float], None] = time.sleep,
) -> PairwiseJudgeResponse:
    prompt = render_pairwise_prompt(c, model, reference)
    raw = with_retries(lambda: judge.pairwise(prompt, model, reference, cfg), cfg, sleep)
    return parse_pairwise_response(raw, len(model), len(reference))


class ProgressCounter:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.done = 0

    def increment(self) -> int:
        with self._lock:
            self.done += 1
            return self.done


# --- anonymization ----------------------------------------------------------


@dataclass(frozen=True)
class LeakViolation:
    kind: str  # smiles, smiles-whitespace, inchikey, inchikey-skeleton, custom
    offset: int  # byte offset into the UTF-8 payload
    length: int  # byte length
    text: str


@dataclass(frozen=True)
class SanitizeResult:
    payload: str
    violations: tuple[LeakViolation, ...]

    @property
    def clean(self) -> bool:
        return not self.violations


def sanitize_handoff(
    payload: str,
    query: Compound,
    extra_patterns: Sequence[str | re.Pattern] = (),
) -> SanitizeResult:
    """Scan a hand-off payload for identifiers of the studied compound.

    Looks for the SMILES (verbatim, or broken up by whitespace), the full
    InChIKey and its 14-character skeleton block, plus any user-supplied
    patterns. The payload is never modified.
    """
    spans: list[tuple[int, int, str]] = []
    if query.smiles:
        smiles_re = re.compile(r"\s*".join(re.escape(ch) for ch in query.smiles))
        for m in smiles_re.finditer(payload):
            kind = "smiles" if m.group(0) == query.smiles else "smiles-whitespace"
            spans.append((m.start(), m.end(), kind))
    key_spans = [(m.start(), m.end()) for m in re.finditer(re.escape(query.inchikey), payload, re.I)]
    spans.extend((s, e, "inchikey") for s, e in key_spans)
    for m in re.finditer(re.escape(query.inchikey[:14]), payload, re.I):
        if not any(s <= m.start() and m.end() <= e for s, e in key_spans):
            spans.append((m.start(), m.end(), "inchikey-skeleton"))
    for pat in extra_patterns:
        rx = pat if isinstance(pat, re.Pattern) else re.compile(pat)
        spans.extend((m.start(), m.end(), "custom") for m in rx.finditer(payload) if m.end() > m.start())
    spans.sort()
    violations = []
    for start, end, kind in spans:
        b_start = len(payload[:start].encode("utf-8"))
        text = payload[start:end]
        violations.append(LeakViolation(kind, b_start, len(text.encode("utf-8")), text))
    return SanitizeResult(payload, tuple(violations))

