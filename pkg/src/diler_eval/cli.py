"""Command-line entry point: ``diler-eval <subcommand>``.

Effective configuration is resolved as dataclass defaults, then an optional
``--config`` JSON file, then explicit flags (flags win), and is echoed into
every report header.

Exit codes: 0 success, 2 input error, 3 judge-endpoint error, 4 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .alignment import (
    DEFAULT_PARTIAL_WEIGHT,
    ALIGNMENT_COLUMNS,
    AlignmentMetrics,
    AlignmentRecord,
    aggregate,
    alignment_record_to_dict,
    compute_metrics,
    parse_alignment_records,
    tally,
)
from .audit import (
    BUCKET_LABELS,
    Bucket,
    bucket_distribution,
    parse_claims,
    per_bucket_alignment,
    per_bucket_metrics,
    read_synonym_cache,
)
from .classification import DEFAULT_THRESHOLD, GRADES, BINARY_COLUMNS, evaluate_predictions
from .curation import (
    DEFAULT_THRESHOLD_NM,
    CurationPipeline,
    ProvenanceLog,
    read_activity_table,
    read_compound_keys,
    read_target_map,
    write_outputs,
)
from .errors import InputError
from .judge import (
    DEFAULT_MODEL,
    HttpJudge,
    JudgeConfig,
    JudgeError,
    MockJudge,
    ProgressCounter,
    render_geval_case,
    run_geval,
    run_pairwise,
)
from .model import (
    HypothesisSet,
    dumps_record,
    parse_benchmark,
    parse_model_outputs,
    parse_predictions,
)
from .report import Report, Table
from .retrieval import (
    DEFAULT_K,
    DEFAULT_P,
    DistanceParams,
    EnergyIndex,
    baseline_cosine,
    baseline_tanimoto,
    read_embeddings,
    read_fingerprints,
)

log = logging.getLogger("diler_eval")

EXIT_OK, EXIT_INPUT, EXIT_JUDGE, EXIT_INTERNAL = 0, 2, 3, 4


class JudgeUnavailable(Exception):
    pass


# --- configs ----------------------------------------------------------------


@dataclass
class AlignEvalConfig:
    model_name: str = "model"
    wp: float = DEFAULT_PARTIAL_WEIGHT
    jobs: int = 4
    strict: bool = False
    mock_judge: bool = False
    judge_endpoint: str | None = None
    judge_model: str = DEFAULT_MODEL
    geval_threshold: float = 0.5
    timeout: float = 60.0
    max_retries: int = 3


@dataclass
class BinaryEvalConfig:
    model_name: str = "model"
    threshold: float = DEFAULT_THRESHOLD
    split: str | None = None


@dataclass
class RetrieveConfig:
    k: int = DEFAULT_K
    p: float = DEFAULT_P
    metric: str = "energy"
    unbiased: bool = False


@dataclass
class CurateConfig:
    threshold_nm: float = DEFAULT_THRESHOLD_NM


@dataclass
class AuditConfig:
    threshold: float = DEFAULT_THRESHOLD
    strip_suffixes: list[str] = field(default_factory=list)


CONFIGS = {
    "align-eval": AlignEvalConfig,
    "binary-eval": BinaryEvalConfig,
    "retrieve": RetrieveConfig,
    "curate": CurateConfig,
    "audit": AuditConfig,
}


def resolve_config(command: str, args: argparse.Namespace) -> Any:
    cls = CONFIGS[command]
    names = {f.name for f in dataclasses.fields(cls)}
    values: dict[str, Any] = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise InputError("config file must hold a JSON object")
        raw = raw.get(command, raw)
        unknown = set(raw) - names
        if unknown:
            raise InputError(f"unknown config keys for {command}: {sorted(unknown)}")
        values.update(raw)
    for name in names:
        if hasattr(args, name):
            values[name] = getattr(args, name)
    return cls(**values)


# --- helpers ----------------------------------------------------------------


def _emit(report: Report, args: argparse.Namespace, out=None) -> None:
    out = out or sys.stdout
    out.write(report.to_json() if args.format == "json" else report.to_text())
    if args.json_out:
        Path(args.json_out).write_text(report.to_json(), encoding="utf-8")


def _run_parallel(fn, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# --- align-eval -------------------------------------------------------------


def cmd_align_eval(args: argparse.Namespace) -> Report:
    cfg: AlignEvalConfig = resolve_config("align-eval", args)
    report = Report("align-eval", dataclasses.asdict(cfg))
    report.add_input("benchmark", args.benchmark)
    report.add_input("model_outputs", args.model_outputs)
    report.add_input("alignments", args.alignments)

    bench = parse_benchmark(args.benchmark, strict=True)
    outputs = parse_model_outputs(args.model_outputs, strict=cfg.strict)
    given: dict[str, AlignmentRecord] = {}
    if args.alignments:
        given = {r.inchikey: r for r in parse_alignment_records(args.alignments)}

    jcfg = JudgeConfig.from_env(
        endpoint=cfg.judge_endpoint,
        model_name=cfg.judge_model,
        geval_threshold=cfg.geval_threshold,
        max_parallel=max(1, cfg.jobs),
        timeout=cfg.timeout,
        max_retries=cfg.max_retries,
    )
    judge = None
    if cfg.mock_judge:
        judge = MockJudge()
    elif jcfg.endpoint:
        judge = HttpJudge(jcfg)
    elif not given:
        raise InputError("no judge configured: pass --mock-judge, --judge-endpoint or --alignments")

    bench_keys = {c.inchikey for c, _ in bench}
    for key in sorted(set(outputs) - bench_keys):
        report.warnings.append(f"coverage: model output for {key} has no benchmark record; ignored")
    jobs = []
    for c, ref in bench:
        out = outputs.get(c.inchikey)
        if out is None:
            report.warnings.append(f"coverage: no model output for {c.inchikey}; compound excluded")
            continue
        report.warnings.extend(out.warnings)
        jobs.append((c, HypothesisSet(c, out.hypotheses, "model"), ref))
    jobs.sort(key=lambda j: j[0].inchikey)
    progress = ProgressCounter()

    def evaluate(job):
        c, model, ref = job
        notes: list[str] = []
        g_eval = None
        judge_failed = False
        if judge is not None:
            try:
                g_eval = run_geval(render_geval_case(c, model, ref), jcfg, judge).score
            except JudgeError as exc:
                judge_failed = True
                notes.append(f"{c.inchikey}: G-Eval failed ({exc}); excluded from the G-Eval mean")
        record = given.get(c.inchikey)
        if record is not None:
            if (record.model_count, record.reference_count) != (len(model), len(ref)):
                raise InputError(
                    f"{c.inchikey}: alignment record counts {record.model_count}/{record.reference_count} "
                    f"do not match {len(model)}/{len(ref)} hypotheses"
                )
            pairs = record.pairs
        elif judge is not None:
            try:
                resp = run_pairwise(c, model, ref, jcfg, judge)
            except JudgeError as exc:
                notes.append(f"{c.inchikey}: pairwise alignment failed ({exc})")
                progress.increment()
                return c, None, None, g_eval, notes, True
            pairs = resp.pairs
            notes.extend(f"{c.inchikey}: {w}" for w in resp.warnings)
        else:
            notes.append(f"{c.inchikey}: no alignment record")
            progress.increment()
            return c, None, None, g_eval, notes, judge_failed
        t = tally(pairs, len(model), len(ref), cfg.wp)
        if t.auto_added:
            notes.append(f"{c.inchikey}: {t.auto_added} unpaired hypotheses counted as Only pairs")
        progress.increment()
        rec = AlignmentRecord(c.inchikey, len(model), len(ref), list(pairs))
        return c, t, rec, g_eval, notes, judge_failed

    results = _run_parallel(evaluate, jobs, cfg.jobs)
    rows = []
    per_metrics: list[AlignmentMetrics] = []
    g_values: list[float | None] = []
    failures = 0
    emitted = []
    for c, t, rec, g_eval, notes, failed in results:
        report.warnings.extend(notes)
        failures += failed
        row: dict[str, Any] = {"inchikey": c.inchikey}
        if t is None:
            row.update({k: None for k, _ in ALIGNMENT_COLUMNS})
            row["g_eval"] = g_eval
            row.update(H=None, D=None, U=None)
        else:
            m = compute_metrics(t)
            per_metrics.append(m)
            g_values.append(g_eval)
            row.update({"g_eval": g_eval, **m.as_dict(), "H": t.H, "D": t.D, "U": t.U})
            emitted.append(rec)
        rows.append(row)
    if jobs and failures == len(jobs) and not per_metrics:
        raise JudgeUnavailable("judge failed for every compound")

    cols = [("inchikey", "InChIKey")] + list(ALIGNMENT_COLUMNS) + [("H", "H"), ("D", "D"), ("U", "U")]
    report.tables.append(Table("per-compound", cols, rows))
    if per_metrics:
        summary = aggregate(per_metrics, g_values)
        agg_row = {"model": cfg.model_name, "n": summary.n, **summary.row()}
        report.tables.append(Table("aggregate", [("model", "Model"), ("n", "n")] + list(ALIGNMENT_COLUMNS), [agg_row]))
        report.sections["support"] = summary.support
    else:
        report.warnings.append("no compound could be evaluated; aggregate row omitted")
    report.sections["partial_match_weight"] = cfg.wp
    if args.emit_alignments:
        with open(args.emit_alignments, "w", encoding="utf-8", newline="\n") as fh:
            for rec in emitted:
                fh.write(dumps_record(alignment_record_to_dict(rec)) + "\n")
    return report


# --- binary-eval ------------------------------------------------------------


def cmd_binary_eval(args: argparse.Namespace) -> Report:
    cfg: BinaryEvalConfig = resolve_config("binary-eval", args)
    report = Report("binary-eval", dataclasses.asdict(cfg))
    report.add_input("benchmark", args.benchmark)
    report.add_input("predictions", args.predictions)
    compounds = [c for c, _ in parse_benchmark(args.benchmark, strict=False)]
    if cfg.split:
        compounds = [c for c in compounds if c.split == cfg.split]
    res = evaluate_predictions(parse_predictions(args.predictions), compounds, cfg.threshold)
    report.warnings.extend(res.warnings)
    if res.roc_auc_note:
        report.warnings.append(f"ROC-AUC absent: {res.roc_auc_note}")
    if res.metrics.mcc_degenerate:
        report.warnings.append("MCC reported as 0: degenerate confusion matrix")
    row = {"model": cfg.model_name, "n": res.n, **res.row()}
    report.tables.append(Table("binary", [("model", "Model"), ("n", "n")] + list(BINARY_COLUMNS), [row]))
    c = res.confusion
    report.sections["binary_confusion"] = {
        "matrix": [[c.tn, c.fp], [c.fn, c.tp]], "rows": ["ref 0", "ref 1"], "cols": ["pred 0", "pred 1"],
    }
    if res.scale is not None:
        grades = [g.value for g in GRADES]
        report.sections["scale_confusion"] = {"matrix": res.scale.as_lists(), "rows": grades, "cols": grades}
        if res.scale.missing:
            report.sections["scale_missing"] = list(res.scale.missing)
    report.sections["coverage"] = res.coverage.as_dict()
    return report


# --- retrieve ---------------------------------------------------------------


def cmd_retrieve(args: argparse.Namespace) -> Report:
    cfg: RetrieveConfig = resolve_config("retrieve", args)
    report = Report("retrieve", dataclasses.asdict(cfg))
    report.add_input("corpus", args.corpus)
    report.add_input("queries", args.queries)
    rows = []
    if cfg.metric == "tanimoto":
        corpus_fp = read_fingerprints(args.corpus)
        for q in read_fingerprints(args.queries):
            for rank, hit in enumerate(baseline_tanimoto(q, corpus_fp, cfg.k), 1):
                rows.append({"query": q.id, "rank": rank, "id": hit.id, "label": hit.label, "distance": hit.distance})
    else:
        corpus = read_embeddings(args.corpus)
        queries = read_embeddings(args.queries)
        index = EnergyIndex(corpus, DistanceParams(cfg.p, cfg.unbiased)) if cfg.metric == "energy" else None
        for q in queries:
            hits = index.top_k(q, cfg.k) if index is not None else baseline_cosine(q, corpus, cfg.k)
            for rank, hit in enumerate(hits, 1):
                rows.append({"query": q.id, "rank": rank, "id": hit.id, "label": hit.label, "distance": hit.distance})
    cols = [("query", "Query"), ("rank", "Rank"), ("id", "Id"), ("label", "Label"), ("distance", "Distance")]
    report.tables.append(Table("hits", cols, rows))
    return report


# --- curate -----------------------------------------------------------------


def cmd_curate(args: argparse.Namespace) -> Report:
    cfg: CurateConfig = resolve_config("curate", args)
    report = Report("curate", dataclasses.asdict(cfg))
    for name in ("activity", "mapping", "dili_compounds"):
        report.add_input(name, getattr(args, name))
    pre_log = ProvenanceLog()
    records = read_activity_table(args.activity, pre_log)
    pipeline = CurationPipeline(cfg.threshold_nm, read_target_map(args.mapping), read_compound_keys(args.dili_compounds))
    pipeline.log.entries.extend(pre_log.entries)
    result = pipeline.run(records)
    write_outputs(result, args.out_dir)
    cols = [("target_id", "Target"), ("task", "Task"), ("n_total", "n"), ("n_positive", "pos"),
            ("n_negative", "neg"), ("majority_fraction", "Majority"), ("accepted", "Accepted"),
            ("rejection_reason", "Reason")]
    rows = [dataclasses.asdict(r) | {"task": r.task.value} for r in result.reports]
    report.tables.append(Table("datasets", cols, rows))
    counts: dict[str, int] = {}
    for e in result.log.entries:
        k = f"{e.stage}:{e.action}"
        counts[k] = counts.get(k, 0) + 1
    report.sections["provenance_counts"] = dict(sorted(counts.items()))
    report.sections["records_after_leakage_removal"] = len(result.records)
    Path(args.out_dir, "report.json").write_text(report.to_json(), encoding="utf-8")
    return report


# --- audit ------------------------------------------------------------------


def cmd_audit(args: argparse.Namespace) -> Report:
    cfg: AuditConfig = resolve_config("audit", args)
    report = Report("audit", dataclasses.asdict(cfg))
    for name in ("claims", "synonyms", "predictions", "benchmark", "alignments"):
        report.add_input(name, getattr(args, name, None))
    claims = parse_claims(args.claims)
    table = read_synonym_cache(args.synonyms, cfg.strip_suffixes)
    dist = bucket_distribution(claims, table)
    for key in dist.missing:
        report.warnings.append(f"{key}: no synonyms in cache; excluded from the audit")
    pct = dist.percentages()
    rows = [{"bucket": BUCKET_LABELS[b], "n": dist.counts[b], "pct": pct[b]} for b in Bucket]
    report.tables.append(Table("bucket distribution", [("bucket", "Bucket"), ("n", "n"), ("pct", "%")], rows,
                               digits={"pct": 1}))

    compounds = [c for c, _ in parse_benchmark(args.benchmark, strict=False)]
    agg, bucket_rows = per_bucket_metrics(claims, table, parse_predictions(args.predictions), compounds, cfg.threshold)
    cols = [("bucket", "Bucket")] + list(BINARY_COLUMNS)
    metric_rows = [{"bucket": f"{r.name} (n={r.n})", **r.row()} for r in [agg, *bucket_rows]]
    report.tables.append(Table("binary metrics by bucket", cols, metric_rows))
    report.sections["confusion_by_bucket"] = {r.name: r.confusion.as_dict() for r in [agg, *bucket_rows]}

    if args.alignments:
        metrics = {}
        for rec in parse_alignment_records(args.alignments):
            metrics[rec.inchikey] = compute_metrics(tally(rec.pairs, rec.model_count, rec.reference_count))
        arows = [{"bucket": f"{name} (n={s.n})", **s.row()} for name, s in per_bucket_alignment(claims, table, metrics)]
        report.tables.append(Table("alignment metrics by bucket", [("bucket", "Bucket")] + list(ALIGNMENT_COLUMNS), arows))
    return report


# --- parser -----------------------------------------------------------------

S = argparse.SUPPRESS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diler-eval", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON file of config values; flags override it")
        p.add_argument("--json-out", help="also write the machine-readable report here")
        p.add_argument("--format", choices=("text", "json"), default="text", help="stdout format")

    p = sub.add_parser("align-eval", help="hypothesis alignment metrics against the benchmark")
    p.add_argument("benchmark")
    p.add_argument("model_outputs")
    p.add_argument("--model-name", dest="model_name", default=S)
    p.add_argument("--wp", type=float, default=S, help="partial-match weight (default 0.5)")
    p.add_argument("--jobs", type=int, default=S)
    p.add_argument("--strict", action="store_true", default=S)
    p.add_argument("--mock-judge", dest="mock_judge", action="store_true", default=S)
    p.add_argument("--judge-endpoint", dest="judge_endpoint", default=S)
    p.add_argument("--judge-model", dest="judge_model", default=S)
    p.add_argument("--geval-threshold", dest="geval_threshold", type=float, default=S)
    p.add_argument("--timeout", type=float, default=S)
    p.add_argument("--max-retries", dest="max_retries", type=int, default=S)
    p.add_argument("--alignments", help="precomputed alignment records (skips the pairwise judge)")
    p.add_argument("--emit-alignments", dest="emit_alignments", help="write the alignment records used")
    common(p)
    p.set_defaults(func=cmd_align_eval)

    p = sub.add_parser("binary-eval", help="binary and A-E classification metrics")
    p.add_argument("benchmark")
    p.add_argument("predictions")
    p.add_argument("--model-name", dest="model_name", default=S)
    p.add_argument("--threshold", type=float, default=S)
    p.add_argument("--split", choices=("train", "test", "post2021"), default=S)
    common(p)
    p.set_defaults(func=cmd_binary_eval)

    p = sub.add_parser("retrieve", help="top-k retrieval over an embedding or fingerprint corpus")
    p.add_argument("corpus")
    p.add_argument("queries")
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--p", type=float, default=S, help="energy-distance exponent (default 0.5)")
    p.add_argument("--metric", choices=("energy", "cosine", "tanimoto"), default=S)
    p.add_argument("--unbiased", action="store_true", default=S, help="exclude self-pairs from within-set means")
    common(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("curate", help="build balanced binary MIE datasets from activity records")
    p.add_argument("activity")
    p.add_argument("mapping")
    p.add_argument("dili_compounds")
    p.add_argument("out_dir")
    p.add_argument("--threshold-nm", dest="threshold_nm", type=float, default=S)
    common(p)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("audit", help="name-recognition leakage audit")
    p.add_argument("claims")
    p.add_argument("synonyms")
    p.add_argument("predictions")
    p.add_argument("benchmark")
    p.add_argument("--threshold", type=float, default=S)
    p.add_argument("--strip-suffix", dest="strip_suffixes", action="append", default=S)
    p.add_argument("--alignments", help="alignment records for per-bucket alignment metrics")
    common(p)
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        report = args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (JudgeUnavailable, JudgeError) as exc:
        print(f"judge error: {exc}", file=sys.stderr)
        return EXIT_JUDGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    _emit(report, args)
    return EXIT_OK
