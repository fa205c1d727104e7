from __future__ import annotations

import json
import subprocess
import sys

import pytest

from diler_eval import cli
from diler_eval.judge import TransientJudgeError

from conftest import FIXTURES

F = FIXTURES


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def table(report, name):
    t = next(t for t in report["tables"] if t["name"] == name)
    return [dict(zip(t["columns"], r)) if isinstance(r, list) else r for r in t["rows"]]


COMMANDS = {
    "align-eval": ["align-eval", F / "benchmark.jsonl", F / "model_outputs.jsonl", "--mock-judge"],
    "binary-eval": ["binary-eval", F / "benchmark.jsonl", F / "predictions.jsonl"],
    "retrieve": ["retrieve", F / "corpus.demb", F / "queries.demb", "--k", "3"],
    "audit": ["audit", F / "audit_claims.jsonl", F / "audit_synonyms.jsonl", F / "audit_predictions.jsonl",
              F / "audit_benchmark.jsonl"],
}


@pytest.mark.parametrize("name", sorted(COMMANDS))
def test_double_run_is_byte_identical(name, tmp_path, capsys):
    outs = []
    for i in range(2):
        code, text, _ = run(COMMANDS[name] + ["--json-out", tmp_path / f"{i}.json"], capsys)
        assert code == 0
        outs.append((text, (tmp_path / f"{i}.json").read_bytes()))
    assert outs[0] == outs[1]
    json.loads(outs[0][1])


def test_curate_double_run(tmp_path, capsys):
    for d in ("a", "b"):
        argv = ["curate", F / "activity.csv", F / "target_map.csv", F / "dili_compounds.txt", tmp_path / d]
        assert run(argv + ["--json-out", tmp_path / f"{d}.json"], capsys)[0] == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "diler_eval", "binary-eval", str(F / "benchmark.jsonl"),
                        str(F / "predictions.jsonl"), "--format", "json"], capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["header"]["command"] == "binary-eval"


# --- exit codes ---------------------------------------------------------------


def test_missing_file_exit_2(capsys):
    code, out, err = run(["binary-eval", F / "nope.jsonl", F / "predictions.jsonl"], capsys)
    assert code == 2 and out == "" and "error" in err


def test_malformed_input_exit_2(tmp_path, capsys):
    bad = tmp_path / "b.jsonl"
    bad.write_text('{"inchikey": "x"}\n')
    assert run(["binary-eval", bad, F / "predictions.jsonl"], capsys)[0] == 2


def test_no_judge_configured_exit_2(capsys, monkeypatch):
    monkeypatch.delenv("DILER_JUDGE_ENDPOINT", raising=False)
    code, _, err = run(["align-eval", F / "benchmark.jsonl", F / "model_outputs.jsonl"], capsys)
    assert code == 2 and "no judge configured" in err


class DeadJudge:
    def geval(self, case, cfg):
        raise TransientJudgeError("503")

    def pairwise(self, prompt, model, reference, cfg):
        raise TransientJudgeError("503")


def test_judge_down_exit_3(capsys, monkeypatch):
    monkeypatch.setattr(cli, "MockJudge", DeadJudge)
    code, out, err = run(COMMANDS["align-eval"] + ["--max-retries", "1"], capsys)
    assert code == 3 and out == ""


def test_internal_error_exit_4(capsys, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("unexpected")

    monkeypatch.setattr(cli, "evaluate_predictions", boom)
    code, out, err = run(COMMANDS["binary-eval"], capsys)
    assert code == 4 and "internal error" in err


# --- behaviour ---------------------------------------------------------------------


def test_align_eval_coverage_warning(tmp_path, capsys):
    lines = (F / "model_outputs.jsonl").read_text().splitlines()
    partial = tmp_path / "m.jsonl"
    partial.write_text("\n".join(lines[1:]) + "\n")
    code, out, _ = run(COMMANDS["align-eval"][:2] + [partial, "--mock-judge", "--format", "json"], capsys)
    report = json.loads(out)
    assert code == 0
    assert any("no model output" in w for w in report["warnings"])
    assert table(report, "aggregate")[0]["n"] == 4


def test_align_eval_alignment_round_trip(tmp_path, capsys):
    emitted = tmp_path / "al.jsonl"
    code, first, _ = run(COMMANDS["align-eval"] + ["--emit-alignments", emitted, "--format", "json"], capsys)
    assert code == 0 and emitted.exists()
    code, second, _ = run(COMMANDS["align-eval"] + ["--alignments", emitted, "--format", "json"], capsys)
    assert code == 0
    assert table(json.loads(first), "per-compound") == table(json.loads(second), "per-compound")


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"retrieve": {"k": 2, "p": 1.0}}))
    code, out, _ = run(COMMANDS["retrieve"][:3] + ["--config", cfg, "--format", "json"], capsys)
    report = json.loads(out)
    assert code == 0 and report["header"]["config"]["k"] == 2 and report["header"]["config"]["p"] == 1.0
    code, out, _ = run(COMMANDS["retrieve"][:3] + ["--config", cfg, "--k", "4", "--format", "json"], capsys)
    report = json.loads(out)
    assert report["header"]["config"]["k"] == 4 and report["header"]["config"]["p"] == 1.0
    assert len(table(report, "hits")) == 4 * 3


def test_config_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kk": 2}))
    assert run(COMMANDS["retrieve"] + ["--config", cfg], capsys)[0] == 2


def test_retrieve_self_hit(capsys):
    code, out, _ = run(COMMANDS["retrieve"] + ["--format", "json"], capsys)
    hits = table(json.loads(out), "hits")
    first = next(h for h in hits if h["query"] == "query-copy" and h["rank"] == 1)
    assert first["id"] == "mol-017" and first["distance"] == 0.0


def test_retrieve_tanimoto(capsys):
    argv = ["retrieve", F / "fingerprints.jsonl", F / "fingerprint_queries.jsonl", "--metric", "tanimoto",
            "--k", "1", "--format", "json"]
    code, out, _ = run(argv, capsys)
    [hit] = table(json.loads(out), "hits")
    assert code == 0 and hit["id"] == "mol-004" and hit["distance"] == 0.0


def test_audit_text_report(capsys):
    code, out, _ = run(COMMANDS["audit"], capsys)
    assert code == 0
    for s in ("19.3", "0.9", "79.8", "Recognized Correctly (n=2)"):
        assert s in out


def test_audit_all_unclaimed(tmp_path, capsys):
    claims = tmp_path / "c.jsonl"
    keys = [json.loads(ln)["inchikey"] for ln in (F / "audit_claims.jsonl").read_text().splitlines()]
    claims.write_text("".join(json.dumps({"inchikey": k, "claimed_name": None}) + "\n" for k in keys))
    argv = ["audit", claims] + COMMANDS["audit"][2:] + ["--format", "json"]
    code, out, _ = run(argv, capsys)
    rows = table(json.loads(out), "binary metrics by bucket")
    assert code == 0 and len(rows) == 2
