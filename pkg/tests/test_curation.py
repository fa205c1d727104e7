from __future__ import annotations

from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from diler_eval.curation import (
    ActivityRecord,
    BinaryLabelRecord,
    CurationError,
    CurationPipeline,
    Endpoint,
    ProvenanceLog,
    Source,
    StageOrderError,
    Task,
    augment_labels,
    binarize,
    dedup,
    filter_datasets,
    propagate_binding_negatives,
    read_activity_table,
    read_compound_keys,
    read_target_map,
    reconcile_sources,
    remove_leakage,
    resolve_functional_conflicts,
    write_outputs,
)

from conftest import FIXTURES, GOLDEN

A, I, B = Task.ACTIVATION, Task.INHIBITION, Task.BINDING


def act(value, endpoint=Endpoint.IC50, cid="C1", target="T1", source=Source.CHEMBL):
    return ActivityRecord(source, target, cid, "C", endpoint, value)


def rec(cid, task, label, target="T1", sources=("chembl",)):
    return BinaryLabelRecord(target, cid, task, label, "C", sources)


def run_fixture():
    log = ProvenanceLog()
    records = read_activity_table(FIXTURES / "activity.csv", log)
    pipe = CurationPipeline(target_map=read_target_map(FIXTURES / "target_map.csv"),
                            dili_compounds=read_compound_keys(FIXTURES / "dili_compounds.txt"))
    pipe.log.entries.extend(log.entries)
    return pipe.run(records)


@pytest.fixture(scope="module")
def result():
    return run_fixture()


# --- single operations ----------------------------------------------------------


@pytest.mark.parametrize("value, label", [(9999.999, 1), (10_000.0, 0), (10_000.001, 0), (1e-3, 1)])
def test_binarize_strict_threshold(value, label):
    assert binarize(act(value)).label == label


def test_binarize_task_mapping_and_rejection():
    assert [binarize(act(1, e)).task for e in Endpoint] == [I, A, B]
    with pytest.raises(CurationError):
        act(0.0)


def test_dedup_collapse_and_conflict():
    log = ProvenanceLog()
    out = dedup([rec("C1", I, 1), rec("C1", I, 1), rec("C2", I, 1), rec("C2", I, 0)], log)
    assert [r.compound_id for r in out] == ["C1"]
    assert Counter(e.action for e in log.entries) == {"merge": 1, "drop": 2}


def test_functional_conflict_drops_both_positives():
    kept, pairs = resolve_functional_conflicts([rec("C1", A, 1), rec("C1", I, 1), rec("C1", B, 1), rec("C2", A, 1)])
    assert pairs == [("C1", "T1")]
    assert {(r.compound_id, r.task) for r in kept} == {("C1", B), ("C2", A)}


def test_augmentation_implies_opposite_negative():
    out = augment_labels([rec("C1", A, 1), rec("C2", I, 1), rec("C3", A, 0)])
    assert {(r.compound_id, r.task, r.label) for r in out} == {
        ("C1", A, 1), ("C1", I, 0), ("C2", I, 1), ("C2", A, 0), ("C3", A, 0)}


def test_augmentation_keeps_explicit_positive_and_flags():
    log = ProvenanceLog()
    out = augment_labels([rec("C1", A, 1), rec("C1", I, 1)], log)
    assert len(out) == 2 and all(r.label == 1 for r in out)
    assert {e.action for e in log.entries} == {"flag"}


tasks = st.sampled_from([A, I, B])
records = st.lists(st.tuples(st.sampled_from(["C1", "C2", "C3"]), tasks, st.integers(0, 1)), max_size=12).map(
    lambda xs: list({(c, t): rec(c, t, y) for c, t, y in xs}.values()))


@given(records)
def test_augmentation_idempotent_and_unique(rs):
    once = augment_labels(rs)
    assert augment_labels(once) == once
    assert len({r.key for r in once}) == len(once)
    assert {r.key: r.label for r in rs}.items() <= {r.key: r.label for r in once}.items()


@given(records)
def test_binding_propagation_idempotent_and_unique(rs):
    once = propagate_binding_negatives(rs)
    assert propagate_binding_negatives(once) == once
    assert len({r.key for r in once}) == len(once)


def test_binding_negative_propagates_positive_does_not():
    out = propagate_binding_negatives([rec("C1", B, 0), rec("C2", B, 1)])
    assert {(r.compound_id, r.task, r.label) for r in out} == {("C1", B, 0), ("C1", A, 0), ("C1", I, 0), ("C2", B, 1)}


def test_reconcile_agree_override_and_single_source():
    log = ProvenanceLog()
    ev = ("evebio",)
    out = reconcile_sources(
        [rec("C1", I, 1), rec("C2", I, 1), rec("C3", I, 0)],
        [rec("C1", I, 1, sources=ev), rec("C2", I, 0, sources=ev), rec("C4", I, 0, sources=ev),
         rec("C5", I, 0, sources=ev), rec("C5", I, 1, sources=ev)],
        log,
    )
    got = {r.compound_id: (r.label, r.sources) for r in out}
    assert got == {"C1": (1, ("chembl", "evebio")), "C2": (0, ev), "C3": (0, ("chembl",)), "C4": (0, ev)}
    assert sorted(e.reason for e in log.entries) == [
        "evebio-override: evebio label 0", "intra-source conflict in evebio", "intra-source conflict in evebio"]


def test_leakage_is_case_insensitive():
    assert remove_leakage([rec("CPD1", I, 1), rec("CPD2", I, 0)], ["cpd1"]) == [rec("CPD2", I, 0)]


def _group(npos, nneg):
    return [rec(f"P{i}", I, 1) for i in range(npos)] + [rec(f"N{i}", I, 0) for i in range(nneg)]


@pytest.mark.parametrize("npos, nneg, accepted", [
    (21, 21, True), (20, 22, False), (21, 189, False), (22, 188, True), (189, 21, False),
])
def test_filter_boundaries(npos, nneg, accepted):
    [rep] = filter_datasets(_group(npos, nneg))
    assert rep.accepted is accepted
    assert (rep.n_positive, rep.n_negative, rep.n_total) == (npos, nneg, npos + nneg)


def test_stage_order_enforced():
    pipe = CurationPipeline()
    with pytest.raises(StageOrderError):
        pipe.dedup()
    pipe.binarize([])
    with pytest.raises(StageOrderError):
        pipe.augment_labels()


# --- file readers -----------------------------------------------------------------


def test_reader_rejects_units_and_bad_rows(tmp_path):
    p = tmp_path / "a.csv"
    header = "source,target_id,compound_id,smiles,endpoint,value_nM\n"
    p.write_text(header + "chembl,T,C1,C,IC50,5 uM\n")
    with pytest.raises(CurationError, match="row 2"):
        read_activity_table(p)
    p.write_text(header + "chembl,T,C1,C,IC50,-3\n")
    with pytest.raises(CurationError):
        read_activity_table(p)
    p.write_text(header + "pubchem,T,C1,C,IC50,3\n")
    with pytest.raises(CurationError, match="unknown source"):
        read_activity_table(p)
    p.write_text("source,target_id\nchembl,T\n")
    with pytest.raises(CurationError, match="missing columns"):
        read_activity_table(p)


def test_reader_tsv_and_endpoint_case(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text("source\ttarget_id\tcompound_id\tsmiles\tendpoint\tvalue_nM\nEveBIO\tT\tc1\tC\tkd\t1e3\n")
    [r] = read_activity_table(p)
    assert (r.source, r.endpoint, r.value_nM) == (Source.EVEBIO, Endpoint.KD, 1000.0)


def test_empty_activity_file(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("source,target_id,compound_id,smiles,endpoint,value_nM\n")
    res = CurationPipeline().run(read_activity_table(p))
    assert res.records == [] and res.reports == []
    write_outputs(res, tmp_path / "out")
    assert (tmp_path / "out" / "report.csv").read_text().count("\n") == 1
    assert list((tmp_path / "out" / "datasets").iterdir()) == []


# --- shipped fixture, traced by hand --------------------------------------------------


def test_fixture_dataset_reports(result):
    got = {(r.target_id, r.task.value): (r.n_positive, r.n_negative, r.accepted) for r in result.reports}
    assert got == {
        ("CHEMBL_TA", "activation"): (20, 22, False),
        ("CHEMBL_TA", "binding"): (0, 2, False),
        ("CHEMBL_TA", "inhibition"): (21, 21, True),
        ("CHEMBL_TB", "activation"): got[("CHEMBL_TB", "activation")][:2] + (False,),
        ("CHEMBL_TB", "binding"): got[("CHEMBL_TB", "binding")][:2] + (False,),
        ("CHEMBL_TB", "inhibition"): got[("CHEMBL_TB", "inhibition")][:2] + (False,),
    }
    ta_act = next(r for r in result.reports if r.target_id == "CHEMBL_TA" and r.task is A)
    assert ta_act.rejection_reason == "minority count 20 <= 20"
    ta_bind = next(r for r in result.reports if r.target_id == "CHEMBL_TA" and r.task is B)
    assert "majority fraction" in ta_bind.rejection_reason and "minority count 0" in ta_bind.rejection_reason
    assert len(result.records) == 92
    assert len({r.key for r in result.records}) == len(result.records)


def test_fixture_provenance_per_rule(result):
    counts = Counter((e.stage, e.action) for e in result.log.entries)
    assert counts == {
        ("extract", "skip"): 1,
        ("dedup", "merge"): 1,
        ("dedup", "drop"): 2,
        ("resolve_functional_conflicts", "drop"): 2,
        ("augment_labels", "add"): 44,
        ("propagate_binding_negatives", "flag"): 1,
        ("propagate_binding_negatives", "add"): 2,
        ("reconcile_sources", "drop"): 1,
        ("remove_leakage", "drop"): 2,
        ("filter_datasets", "reject"): 5,
    }
    by = {(e.stage, e.compound_id) for e in result.log.entries}
    assert ("resolve_functional_conflicts", "CPD043") in by
    assert ("remove_leakage", "CPD044") in by
    assert ("propagate_binding_negatives", "CPD001") in by  # explicit IC50 positive kept over Kd negative
    assert ("reconcile_sources", "CPD046") in by
    assert ("extract", "CPD045") in by


def test_fixture_threshold_boundary_records(result):
    recs = {(r.compound_id, r.task): r for r in result.records}
    assert recs[("CPD021", I)].label == 1  # 9999.999 nM
    assert recs[("CPD042", B)].label == 0  # exactly 10000 nM
    assert ("CPD044", I) not in recs
    assert recs[("CPD046", I)].sources == ("evebio",)
    assert recs[("CPD047", A)].sources == ("chembl", "evebio")


def test_fixture_outputs_match_golden(result, tmp_path):
    write_outputs(result, tmp_path)
    golden = GOLDEN / "curation"
    want = sorted(p.relative_to(golden) for p in golden.rglob("*") if p.is_file())
    got = sorted(p.relative_to(tmp_path) for p in tmp_path.rglob("*") if p.is_file())
    assert got == want
    for rel in want:
        assert (tmp_path / rel).read_bytes() == (golden / rel).read_bytes(), rel


def test_rerun_is_byte_identical(tmp_path):
    write_outputs(run_fixture(), tmp_path / "a")
    write_outputs(run_fixture(), tmp_path / "b")
    for p in (tmp_path / "a").rglob("*.csv"):
        assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()
