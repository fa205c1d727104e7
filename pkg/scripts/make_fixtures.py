"""Regenerate every file under fixtures/ deterministically.

    python3 scripts/make_fixtures.py [--out fixtures] [--seed 20240611]

Re-running with the same seed rewrites byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import string
from pathlib import Path

import numpy as np

from diler_eval.retrieval import AtomEmbeddingSet, write_embeddings, write_embeddings_jsonl

SEED = 20240611


def _steps(*text: str) -> list[str]:
    return [f"{i}. {t}" for i, t in enumerate(text, 1)]


def _hyp(title, direction, categories, confidence="Medium", n_steps=5, assay=None):
    base = [
        "Parent compound reaches hepatocytes at therapeutic exposure",
        "Primary molecular interaction occurs",
        "Downstream cellular response develops",
        "Tissue-level consequence emerges",
        "Clinical phenotype follows",
        "Severity depends on dose and host factors",
        "Outcome is modulated by adaptation",
    ]
    d = {"title": title, "steps": _steps(*base[:n_steps]), "direction": direction,
         "confidence": confidence, "categories": list(categories)}
    if assay:
        d["suggested_assay"] = assay
    return d


HEP, SAFE = "Hepatotoxic", "Safe"

# (inchikey, smiles, label, severity, split)
COMPOUNDS = [
    ("RZVAJINKPMORJF-UHFFFAOYSA-N", "CC(=O)NC1=CC=C(O)C=C1", 1, "A", "test"),
    ("BSYNRYPXCCBAUM-UHFFFAOYSA-N", "CC(=O)OC1=CC=CC=C1C(=O)O", 1, "B", "test"),
    ("RYYVLZVUVIJVGH-UHFFFAOYSA-N", "CN1C=NC2=C1C(=O)N(C(=O)N2C)C", 0, "E", "test"),
    ("HEFNNWSXXWATRW-UHFFFAOYSA-N", "CC(C)CC1=CC=C(C=C1)C(C)C(=O)O", 1, "C", "test"),
    ("XZWYZXLIPXDOLR-UHFFFAOYSA-N", "CN(C)C(=N)N=C(N)N", 0, "E", "post2021"),
]

REFERENCE = [
    [_hyp("NAPQI-driven glutathione depletion", HEP, ["Reactive Bioactivation", "Oxidative Stress"], "High", 6,
          "GSH depletion assay in primary hepatocytes"),
     _hyp("Mitochondrial permeability transition after protein adduction", HEP,
          ["Mitochondrial Dysfunction", "Liver Cell Death"], "High", 7)],
    [_hyp("Salicylate-induced mitochondrial uncoupling", HEP, ["Mitochondrial Dysfunction"], "Medium", 5),
     _hyp("Reye-like microvesicular steatosis", HEP, ["Liver Metabolism Disruption"], "Low", 6)],
    [_hyp("Rapid CYP1A2 clearance", SAFE, ["Rapid Clearance", "Metabolic Stability"], "High", 5),
     _hyp("No reactive metabolite formation", SAFE, ["No Reactive Bioactivation"], "Medium", 5)],
    [_hyp("Acyl glucuronide protein adducts", HEP, ["Reactive Bioactivation", "Immune-Mediated Liver Response"],
          "Medium", 6),
     _hyp("BSEP inhibition", HEP, ["Cholestasis", "Transport Function Disruption"], "Low", 5),
     _hyp("Mitochondrial beta-oxidation impairment", HEP, ["Mitochondrial Dysfunction"], "Low", 5)],
    [_hyp("Renal clearance without hepatic metabolism", SAFE, ["Rapid Clearance", "Metabolic Stability"], "High", 5)],
]

# Designed so the mock judge produces every label at least once.
MODEL = [
    [_hyp("napqi-driven GLUTATHIONE depletion", HEP, ["Reactive Bioactivation"], "High", 5),
     _hyp("JNK-mediated stress amplification", HEP, ["Stress Signaling Pathway Activation", "Mitochondrial Dysfunction"],
          "Medium", 6)],
    [_hyp("Efficient glucuronidation limits exposure", SAFE, ["Efficient Detoxification", "Metabolic Stability"],
          "Medium", 5),
     _hyp("Bile acid transporter inhibition", HEP, ["Cholestasis", "Transport Function Disruption"], "Low", 5)],
    [_hyp("Rapid CYP1A2 clearance", SAFE, ["Rapid Clearance"], "High", 5),
     _hyp("No reactive metabolite formation", SAFE, ["No Reactive Bioactivation"], "High", 5),
     _hyp("Low hepatocellular accumulation", SAFE, ["Low Intracellular Accumulation"], "Low", 5)],
    [_hyp("Reactive acyl glucuronide haptenation", HEP, ["Reactive Bioactivation"], "Medium", 4),
     _hyp("Idiosyncratic immune activation", HEP, ["Immune-Mediated Liver Response", "Hepatic Steatosis"], "Low", 5)],
    [_hyp("Lactic acidosis with hepatic involvement", HEP, ["Liver Metabolism Disruption"], "Low", 5)],
]

# Model severity calls for the binary fixture: two hits, one miss, one false alarm, one correct negative.
PREDICTED_SEVERITY = ["A", "C", "D", "E", "B"]


def _jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(r, ensure_ascii=False, separators=(",", ":")) + "\n")


def write_benchmark(out: Path) -> None:
    rows, model_rows, preds = [], [], []
    for (key, smi, label, sev, split), ref, mod, psev in zip(COMPOUNDS, REFERENCE, MODEL, PREDICTED_SEVERITY):
        rows.append({"schema_version": 1, "inchikey": key, "smiles": smi, "binary_label": label,
                     "severity": sev, "split": split, "hypotheses": ref})
        model_rows.append({"inchikey": key, "hypotheses": mod, "severity": psev})
        preds.append({"inchikey": key, "severity": psev})
    _jsonl(out / "benchmark.jsonl", rows)
    _jsonl(out / "model_outputs.jsonl", model_rows)
    _jsonl(out / "predictions.jsonl", preds)


def write_embeddings_fixture(out: Path, rng: np.random.Generator) -> None:
    d = 8
    corpus = []
    for i in range(100):
        m = int(rng.integers(2, 13))
        centre = rng.normal(size=d) * 2.0
        corpus.append(AtomEmbeddingSet(f"mol-{i:03d}", centre + rng.normal(size=(m, d)), int(rng.integers(0, 2))))
    # Round through float32 so the in-memory copy equals the on-disk one.
    corpus = [AtomEmbeddingSet(e.id, e.vectors.astype(np.float32), e.label) for e in corpus]
    queries = [AtomEmbeddingSet("query-copy", corpus[17].vectors, None)]
    for i in range(2):
        m = int(rng.integers(3, 10))
        v = (rng.normal(size=d) * 2.0 + rng.normal(size=(m, d))).astype(np.float32)
        queries.append(AtomEmbeddingSet(f"query-{i}", v, None))
    write_embeddings(corpus, out / "corpus.demb")
    write_embeddings(queries, out / "queries.demb")
    write_embeddings_jsonl(corpus[:20], out / "corpus_small.jsonl")
    write_embeddings_jsonl(queries, out / "queries.jsonl")

    nbits = 64
    fps = []
    for i in range(30):
        bits = int(rng.integers(0, 2**63)) | (1 << 63) * int(rng.integers(0, 2))
        fps.append({"id": f"mol-{i:03d}", "label": int(rng.integers(0, 2)), "bits": f"{bits:016x}", "nbits": nbits})
    _jsonl(out / "fingerprints.jsonl", fps)
    q = dict(fps[4], id="fpquery-copy", label=None)
    _jsonl(out / "fingerprint_queries.jsonl", [q])


def curation_rows() -> list[dict]:
    """Hand-designed activity table; see tests/test_curation.py for the trace."""
    rows = []

    def add(source, target, cpd, endpoint, value, assay="A0"):
        rows.append({"source": source, "target_id": target, "compound_id": cpd, "smiles": f"C{cpd[-3:]}",
                     "endpoint": endpoint, "value_nM": value, "assay_id": assay})

    ta, tb, eb = "CHEMBL_TA", "CHEMBL_TB", "EVB_0042"
    for i in range(1, 22):  # 21 inhibitors of TA; the last sits just under the cut
        add("chembl", ta, f"CPD{i:03d}", "IC50", "9999.999" if i == 21 else f"{10 * i * i}", f"A{i:02d}")
    for i in range(22, 42):  # 20 activators of TA
        add("chembl", ta, f"CPD{i:03d}", "EC50", f"{100 * (i - 21)}", f"A{i:02d}")
    add("chembl", ta, "CPD042", "Kd", "10000", "K42")  # exactly at threshold -> negative
    add("chembl", ta, "CPD001", "Kd", "25000", "K01")  # implied inhibition-negative vs explicit positive
    add("chembl", ta, "CPD043", "EC50", "300", "X43")  # both-positive functional conflict
    add("chembl", ta, "CPD043", "IC50", "450", "X43")
    add("chembl", ta, "CPD044", "IC50", "800", "L44")  # in the DILI collection
    add("chembl", ta, "CPD005", "IC50", "250", "A05")  # exact duplicate
    add("chembl", ta, "CPD045", "Ki", "50", "S45")  # endpoint not retained
    add("chembl", tb, "CPD046", "IC50", "500", "B46")  # EveBIO disagrees
    add("evebio", eb, "CPD046", "IC50", "50000", "E46")
    add("chembl", tb, "CPD047", "EC50", "2000", "B47")  # sources agree
    add("evebio", eb, "CPD047", "EC50", "1500", "E47")
    add("evebio", eb, "CPD048", "Kd", "20000", "E48")  # EveBIO only
    add("chembl", tb, "CPD049", "IC50", "300", "B49")  # intra-source conflict
    add("chembl", tb, "CPD049", "IC50", "30000", "B49")
    add("chembl", tb, "CPD050", "Kd", "50", "B50")  # positive binding propagates nothing
    return rows


def write_curation(out: Path, rng: np.random.Generator) -> None:
    rows = curation_rows()
    order = rng.permutation(len(rows))
    buf = io.StringIO(newline="")
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for i in order:
        w.writerow(rows[i])
    (out / "activity.csv").write_text(buf.getvalue(), encoding="utf-8")
    (out / "target_map.csv").write_text("evebio_target,target_id\nEVB_0042,CHEMBL_TB\n", encoding="utf-8")
    (out / "dili_compounds.txt").write_text("CPD044\ncpd999\n", encoding="utf-8")


def _fake_inchikey(rng: np.random.Generator) -> str:
    letters = np.array(list(string.ascii_uppercase))
    a = "".join(rng.choice(letters, 14))
    b = "".join(rng.choice(letters, 8))
    return f"{a}-{b}SA-N"


def write_audit(out: Path, rng: np.random.Generator) -> None:
    """223 test-set compounds bucketed 43 / 2 / 178."""
    n_none, n_ok, n_bad = 43, 2, 178
    n = n_none + n_ok + n_bad
    keys: list[str] = []
    while len(keys) < n:
        k = _fake_inchikey(rng)
        if k not in keys:
            keys.append(k)
    names = [f"hepatoxin-{i:03d}" for i in range(n)]
    labels = rng.integers(0, 2, n)
    bench, claims, syn, preds, aligns = [], [], [], [], []
    for i, key in enumerate(keys):
        if i < n_none:
            claimed = None
        elif i < n_none + n_ok:
            labels[i] = 1  # single-class bucket, as in the published audit
            claimed = f"  {names[i].upper()} "
        else:
            claimed = names[(i + 7) % n]  # a real name, but of another compound
        label = int(labels[i])
        bench.append({"schema_version": 1, "inchikey": key, "smiles": "C" * (1 + i % 9), "binary_label": label,
                      "severity": None, "split": "test",
                      "hypotheses": [_hyp("Generic hepatic liability" if label else "Generic hepatic safety",
                                          HEP if label else SAFE,
                                          ["Liver Cell Death"] if label else ["Metabolic Stability"])]})
        claims.append({"inchikey": key, "claimed_name": claimed})
        syn.append({"inchikey": key, "synonyms": [names[i], f"{names[i].upper()}", f"DX-{i:04d}"],
                    "fetched_at": "2025-01-01T00:00:00+00:00"})
        score = float(np.clip(0.35 * label + rng.uniform(0.0, 0.65), 0.0, 1.0))
        preds.append({"inchikey": key, "score": round(score, 4)})
        h, dn = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        pairs, used = [], 0
        for j in range(min(h, dn)):
            lab = ["Exact Match", "Partial Match", "Contradiction", None][int(rng.integers(0, 4))]
            if lab is None:
                continue
            pairs.append({"model_index": j, "reference_index": j, "label": lab})
            used += 1
        aligns.append({"inchikey": key, "model_count": h, "reference_count": dn, "pairs": pairs})
    _jsonl(out / "audit_benchmark.jsonl", bench)
    _jsonl(out / "audit_claims.jsonl", claims)
    _jsonl(out / "audit_synonyms.jsonl", syn)
    _jsonl(out / "audit_predictions.jsonl", preds)
    _jsonl(out / "audit_alignments.jsonl", aligns)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures"))
    ap.add_argument("--seed", type=int, default=SEED)
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    write_benchmark(out)
    write_embeddings_fixture(out, rng)
    write_curation(out, rng)
    write_audit(out, rng)
    print(f"fixtures written to {out}")


if __name__ == "__main__":
    main()
