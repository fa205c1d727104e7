from __future__ import annotations

import json
import random

import httpx
import pytest

from diler_eval.alignment import AlignmentLabel, tally
from diler_eval.errors import InputError
from diler_eval.judge import (
    PAIRWISE_FIELDS,
    HttpJudge,
    JudgeConfig,
    JudgeError,
    JudgeTimeout,
    MalformedResponse,
    MalformedScore,
    MissingFieldError,
    MockJudge,
    RetriesExhausted,
    TransientJudgeError,
    extract_pairwise_context,
    extract_tags,
    geval_request,
    parse_name_extraction,
    parse_pairwise_response,
    render_baseline_prompts,
    render_geval_case,
    render_name_extraction_prompt,
    render_pairwise_prompt,
    run_geval,
    run_pairwise,
    sanitize_handoff,
    substitute,
    with_retries,
)
from diler_eval.model import HypothesisSet, parse_benchmark, parse_model_outputs

from conftest import ASPIRIN_KEY, FIXTURES, GOLDEN, compound, hset, hyp

L = AlignmentLabel


# --- prompt rendering against checked-in goldens -----------------------------


@pytest.fixture(scope="module")
def first_case():
    c, ref = parse_benchmark(FIXTURES / "benchmark.jsonl")[0]
    out = parse_model_outputs(FIXTURES / "model_outputs.jsonl")[c.inchikey]
    return c, HypothesisSet(c, out.hypotheses, "model"), ref


def test_pairwise_prompt_matches_golden(first_case):
    prompt = render_pairwise_prompt(*first_case)
    assert prompt.encode("utf-8") == (GOLDEN / "pairwise_prompt.txt").read_bytes()
    assert "Be faithful to the provided hypotheses." in prompt
    assert "Do not invent new mechanisms." in prompt
    assert "{" + "HADES_hypotheses}" not in prompt


def test_geval_request_matches_golden(first_case):
    body = geval_request(render_geval_case(*first_case), JudgeConfig())
    text = json.dumps(body, indent=2, ensure_ascii=False) + "\n"
    assert text.encode("utf-8") == (GOLDEN / "geval_request.json").read_bytes()


def test_geval_case_has_three_fields(first_case):
    c, model, ref = first_case
    case = render_geval_case(c, model, ref)
    assert set(json.loads(case.input)) == {"inchikey", "smiles", "binary_label"}
    empty = render_geval_case(c, HypothesisSet(c, (), "model"), ref)
    assert empty.actual_output == "[]"


def test_baseline_prompts_match_golden(first_case):
    for name, text in render_baseline_prompts(first_case[0].smiles).items():
        assert text.encode("utf-8") == (GOLDEN / f"baseline_{name}.txt").read_bytes(), name


def test_braces_in_smiles_survive_substitution():
    c = compound(smiles="C{label}C(=O){smiles}O")
    prompt = render_pairwise_prompt(c, hset(c, hyp(), source="model"), hset(c, hyp()))
    ctx = extract_pairwise_context(prompt)
    assert ctx == {"inchikey": ASPIRIN_KEY, "smiles": "C{label}C(=O){smiles}O", "label": "1"}


def test_substitute_requires_every_placeholder():
    with pytest.raises(KeyError):
        substitute("{a} {b}", {"a": "x"})


def test_mismatched_compound_rejected():
    c, other = compound(), compound(key="RZVAJINKPMORJF-UHFFFAOYSA-N")
    with pytest.raises(InputError):
        render_pairwise_prompt(c, hset(other, hyp()), hset(c, hyp()))


# --- pairwise response parsing ----------------------------------------------


def response(**over):
    r = {
        "pairwise_alignments": [{"hades_index": 0, "diler_index": 0, "label": "Exact Match"},
                                {"hades_index": 1, "label": "HADES Only"}],
        "summary": "one shared mechanism",
        "edited_hades_output": "[EXACT MATCH] a\n[ONLY_IN_HADES] b",
        "edited_diler_output": "[EXACT MATCH] a",
    }
    r.update(over)
    return r


def test_parse_valid_response():
    r = parse_pairwise_response(response(), 2, 1)
    assert [p.label for p in r.pairs] == [L.EXACT, L.MODEL_ONLY]
    assert r.model_tags == [L.EXACT, L.MODEL_ONLY]
    assert r.reference_tags == [L.EXACT]


@pytest.mark.parametrize("field, key", [
    ("pairwise_alignments", "pairwise_alignments"), ("summary", "summary"),
    ("edited_model_output", "edited_hades_output"), ("edited_reference_output", "edited_diler_output"),
])
def test_missing_field_named(field, key):
    r = response()
    del r[key]
    with pytest.raises(MissingFieldError, match=field):
        parse_pairwise_response(r)
    assert field in PAIRWISE_FIELDS


def test_empty_values_are_accepted():
    r = parse_pairwise_response(response(pairwise_alignments=[], summary="", edited_hades_output=None), 2, 1)
    assert r.summary == "" and r.model_tags == []


@pytest.mark.parametrize("label", ["EXACT-MATCH", "exact match", "Exact_Match"])
def test_tolerant_labels(label):
    r = parse_pairwise_response(response(pairwise_alignments=[{"hades_index": 0, "diler_index": 0, "label": label}]))
    assert r.pairs[0].label is L.EXACT


def test_index_out_of_range_and_non_json():
    with pytest.raises(MalformedResponse, match="out of range"):
        parse_pairwise_response(response(), 1, 1)
    with pytest.raises(MalformedResponse):
        parse_pairwise_response("not json {")
    with pytest.raises(MalformedResponse):
        parse_pairwise_response(response(pairwise_alignments=[{"hades_index": 0, "label": "Maybe"}]))


def test_tally_never_raises_on_parsed_responses():
    rng = random.Random(12)
    labels = ["Exact Match", "Partial Match", "Contradiction", "HADES Only", "DILER Only"]
    for _ in range(300):
        m, r = rng.randint(0, 4), rng.randint(0, 4)
        pairs = []
        for _ in range(rng.randint(0, 8)):
            lab = rng.choice(labels)
            d = {"label": lab}
            if lab != "DILER Only" and m:
                d["hades_index"] = rng.randrange(m)
            if lab != "HADES Only" and r:
                d["diler_index"] = rng.randrange(r)
            pairs.append(d)
        try:
            parsed = parse_pairwise_response(response(pairwise_alignments=pairs), m, r)
        except MalformedResponse:
            continue  # e.g. a two-sided label with one side missing
        t = tally(parsed.pairs, m, r)
        assert t.H == m and t.D == r


def test_extract_tags_in_order():
    assert extract_tags("[CONTRADICTION] x [ONLY_IN_DILER] y [PARTIAL MATCH]") == [
        L.CONTRADICTION, L.REFERENCE_ONLY, L.PARTIAL]


# --- mock judge ---------------------------------------------------------------


def test_mock_identical_sets_pass():
    c = compound()
    ref = hset(c, hyp("A"), hyp("B", categories=("Oxidative Stress",)))
    model = HypothesisSet(c, ref.hypotheses, "model")
    cfg = JudgeConfig()
    g = run_geval(render_geval_case(c, model, ref), cfg, MockJudge())
    assert (g.score, g.passed) == (1.0, True)
    r = run_pairwise(c, model, ref, cfg, MockJudge())
    assert tally(r.pairs, 2, 2).E == 2


def test_mock_disjoint_sets_fail():
    c = compound()
    ref = hset(c, hyp("A", categories=("Cholestasis",)))
    model = hset(c, hyp("Z", categories=("Oxidative Stress",)), source="model")
    g = run_geval(render_geval_case(c, model, ref), JudgeConfig(), MockJudge())
    assert (g.score, g.passed) == (0.0, False)
    t = tally(run_pairwise(c, model, ref, JudgeConfig(), MockJudge()).pairs, 1, 1)
    assert (t.HO, t.DO) == (1, 1)


def test_mock_detects_opposing_contradiction():
    c = compound()
    ref = hset(c, hyp("A", categories=("Mitochondrial Dysfunction",)))
    model = hset(c, hyp("Z", direction="Safe", categories=("Mitochondrial Sparing",)), source="model")
    t = tally(run_pairwise(c, model, ref, JudgeConfig(), MockJudge()).pairs, 1, 1)
    assert t.C == 1


def test_mock_is_deterministic(first_case):
    c, model, ref = first_case
    a = MockJudge().pairwise("", model, ref, JudgeConfig())
    b = MockJudge().pairwise("", model, ref, JudgeConfig())
    assert a == b


# --- scores and retries --------------------------------------------------------


class Scripted:
    def __init__(self, *outcomes):
        self.outcomes = list(outcomes)
        self.calls = 0

    def geval(self, case, cfg):
        self.calls += 1
        out = self.outcomes.pop(0)
        if isinstance(out, Exception):
            raise out
        return out


def case():
    c = compound()
    return render_geval_case(c, hset(c, hyp(), source="model"), hset(c, hyp()))


@pytest.mark.parametrize("bad", [{"score": 1.7}, {"score": -0.1}, {"score": "high"}, {"score": True}, {}])
def test_malformed_scores(bad):
    with pytest.raises(MalformedScore):
        run_geval(case(), JudgeConfig(), Scripted(bad), sleep=lambda s: None)


def test_threshold_inclusive():
    assert run_geval(case(), JudgeConfig(geval_threshold=0.5), Scripted({"score": 0.5})).passed


def test_retry_backoff_then_success():
    sleeps = []
    judge = Scripted(TransientJudgeError("503"), JudgeTimeout("t"), {"score": 0.8})
    g = run_geval(case(), JudgeConfig(max_retries=3), judge, sleep=sleeps.append)
    assert g.score == 0.8 and judge.calls == 3 and sleeps == [1.0, 2.0]


def test_all_timeouts_raise_timeout():
    sleeps = []
    with pytest.raises(JudgeTimeout):
        with_retries(lambda: (_ for _ in ()).throw(JudgeTimeout("t")), JudgeConfig(max_retries=4), sleeps.append)
    assert sleeps == [1.0, 2.0, 4.0]


def test_mixed_failures_raise_exhausted():
    judge = Scripted(JudgeTimeout("t"), TransientJudgeError("502"))
    with pytest.raises(RetriesExhausted) as exc:
        run_geval(case(), JudgeConfig(max_retries=2), judge, sleep=lambda s: None)
    assert exc.value.attempts == 2


def test_non_transient_error_not_retried():
    judge = Scripted(JudgeError("400"), {"score": 1.0})
    with pytest.raises(JudgeError):
        run_geval(case(), JudgeConfig(), judge, sleep=lambda s: None)
    assert judge.calls == 1


# --- HTTP transport ------------------------------------------------------------


def http_judge(handler, **cfg):
    cfg = JudgeConfig(endpoint="http://judge.invalid/v1", **cfg)
    return HttpJudge(cfg, client=httpx.Client(transport=httpx.MockTransport(handler)), token="secret"), cfg


def test_http_success_and_request_body():
    seen = []

    def handler(req):
        seen.append((json.loads(req.content), req.headers.get("authorization")))
        return httpx.Response(200, json={"score": 0.9})

    judge, cfg = http_judge(handler)
    assert run_geval(case(), cfg, judge).score == 0.9
    body, auth = seen[0]
    assert body["kind"] == "geval" and body["temperature"] == 0.0 and auth == "secret"


@pytest.mark.parametrize("status", [429, 500, 503])
def test_http_transient_statuses_retry(status):
    calls = []

    def handler(req):
        calls.append(1)
        return httpx.Response(status) if len(calls) == 1 else httpx.Response(200, json={"score": 0.1})

    judge, cfg = http_judge(handler)
    assert run_geval(case(), cfg, judge, sleep=lambda s: None).score == 0.1
    assert len(calls) == 2


def test_http_client_error_and_bad_json():
    judge, cfg = http_judge(lambda req: httpx.Response(401))
    with pytest.raises(JudgeError, match="401"):
        run_geval(case(), cfg, judge, sleep=lambda s: None)
    judge, cfg = http_judge(lambda req: httpx.Response(200, text="<html>"))
    with pytest.raises(MalformedResponse):
        run_geval(case(), cfg, judge, sleep=lambda s: None)


def test_http_timeout():
    def handler(req):
        raise httpx.ReadTimeout("slow", request=req)

    judge, cfg = http_judge(handler, max_retries=2)
    with pytest.raises(JudgeTimeout):
        run_geval(case(), cfg, judge, sleep=lambda s: None)


def test_http_requires_endpoint():
    with pytest.raises(InputError):
        HttpJudge(JudgeConfig())


# --- hand-off sanitizer ---------------------------------------------------------


def test_sanitizer_detects_injected_leaks_and_no_false_positives():
    rng = random.Random(50)
    query = compound()
    filler = ["hepatocyte", "glutathione", "CYP2E1", "transaminase", "bile", "ALT", "NAPQI", "{}", "µM", "—"]
    leaks = [query.smiles, query.inchikey, query.inchikey.lower(), query.inchikey[:14]]
    detected = 0
    for i in range(50):
        words = [rng.choice(filler) for _ in range(rng.randint(5, 30))]
        leak = leaks[i % len(leaks)]
        pos = rng.randint(0, len(words))
        prefix = " ".join(words[:pos]) + " "
        payload = prefix + leak + " " + " ".join(words[pos:])
        res = sanitize_handoff(payload, query)
        hit = [v for v in res.violations if v.offset == len(prefix.encode("utf-8"))]
        if hit and hit[0].length == len(leak.encode("utf-8")):
            detected += 1
    assert detected == 50
    for _ in range(50):
        payload = " ".join(rng.choice(filler) for _ in range(rng.randint(5, 30)))
        assert sanitize_handoff(payload, query).clean


def test_sanitizer_kinds():
    query = compound()
    spaced = " ".join(query.smiles[:5]) + query.smiles[5:]
    res = sanitize_handoff(f"x {spaced} y {query.inchikey}", query, extra_patterns=[r"aspirin"])
    assert [v.kind for v in res.violations] == ["smiles-whitespace", "inchikey"]
    assert sanitize_handoff("take aspirin", query, [r"aspirin"]).violations[0].kind == "custom"


# --- name extraction -------------------------------------------------------------


def test_name_extraction():
    assert "{reasoning}" not in render_name_extraction_prompt("it is {caffeine}")
    assert "it is {caffeine}" in render_name_extraction_prompt("it is {caffeine}")
    assert parse_name_extraction('{"claimed_name": " Aspirin "}') == "Aspirin"
    assert parse_name_extraction({"claimed_name": None}) is None
    assert parse_name_extraction({"claimed_name": ""}) is None
    with pytest.raises(MissingFieldError):
        parse_name_extraction({"name": "x"})
