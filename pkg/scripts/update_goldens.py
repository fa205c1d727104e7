"""Rewrite tests/golden/ from the current code and fixtures.

Only run this after a deliberate change to prompt rendering or curation
output, and review the resulting diff before committing it.
"""

from __future__ import annotations

import json
import shutil
from pathlib import Path

from diler_eval.curation import CurationPipeline, ProvenanceLog, read_activity_table, read_compound_keys, read_target_map, write_outputs
from diler_eval.judge import JudgeConfig, geval_request, render_baseline_prompts, render_geval_case, render_pairwise_prompt
from diler_eval.model import HypothesisSet, parse_benchmark, parse_model_outputs

ROOT = Path(__file__).resolve().parent.parent
FIX = ROOT / "fixtures"
GOLDEN = ROOT / "tests" / "golden"


def render_prompts() -> dict[str, str]:
    compound, ref = parse_benchmark(FIX / "benchmark.jsonl")[0]
    out = parse_model_outputs(FIX / "model_outputs.jsonl")[compound.inchikey]
    model = HypothesisSet(compound, out.hypotheses, "model")
    case = render_geval_case(compound, model, ref)
    files = {
        "geval_request.json": json.dumps(geval_request(case, JudgeConfig()), indent=2, ensure_ascii=False) + "\n",
        "pairwise_prompt.txt": render_pairwise_prompt(compound, model, ref),
    }
    for name, text in render_baseline_prompts(compound.smiles).items():
        files[f"baseline_{name}.txt"] = text
    return files


def run_curation(out_dir: Path) -> None:
    log = ProvenanceLog()
    records = read_activity_table(FIX / "activity.csv", log)
    pipe = CurationPipeline(target_map=read_target_map(FIX / "target_map.csv"),
                            dili_compounds=read_compound_keys(FIX / "dili_compounds.txt"))
    pipe.log.entries.extend(log.entries)
    write_outputs(pipe.run(records), out_dir)


def main() -> None:
    GOLDEN.mkdir(parents=True, exist_ok=True)
    for name, text in render_prompts().items():
        (GOLDEN / name).write_bytes(text.encode("utf-8"))
    cur = GOLDEN / "curation"
    shutil.rmtree(cur, ignore_errors=True)
    run_curation(cur)
    print(f"goldens written to {GOLDEN}")


if __name__ == "__main__":
    main()
