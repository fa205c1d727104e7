"""Bioactivity curation: raw potency measurements to balanced binary datasets.

Stage order is fixed and enforced by :class:`CurationPipeline`::

    binarize -> dedup -> resolve_functional_conflicts -> augment_labels
      -> propagate_binding_negatives -> reconcile_sources -> remove_leakage
      -> filter_datasets

Values must already be in nM; the reader rejects anything that is not a
plain positive number. Every dropped, added or flagged record is written to
a :class:`ProvenanceLog` with the stage and reason.
"""

from __future__ import annotations

import csv
import enum
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import InputError

DEFAULT_THRESHOLD_NM = 10_000.0
MAX_MAJORITY_FRACTION = 0.90
MIN_MINORITY = 20  # minority class must be strictly larger


class CurationError(InputError):
    def __init__(self, message: str, *, stage: str, row: int | None = None):
        self.stage = stage
        self.row = row
        where = f" (row {row})" if row is not None else ""
        super().__init__(f"[{stage}]{where} {message}")


class StageOrderError(RuntimeError):
    pass


class Source(str, enum.Enum):
    CHEMBL = "chembl"
    EVEBIO = "evebio"


class Endpoint(str, enum.Enum):
    IC50 = "IC50"
    EC50 = "EC50"
    KD = "Kd"


class Task(str, enum.Enum):
    INHIBITION = "inhibition"
    ACTIVATION = "activation"
    BINDING = "binding"


ENDPOINT_TASK = {Endpoint.IC50: Task.INHIBITION, Endpoint.EC50: Task.ACTIVATION, Endpoint.KD: Task.BINDING}
_ENDPOINT_BY_FOLD = {e.value.casefold(): e for e in Endpoint}
_OPPOSITE = {Task.ACTIVATION: Task.INHIBITION, Task.INHIBITION: Task.ACTIVATION}

STAGES = (
    "binarize",
    "dedup",
    "resolve_functional_conflicts",
    "augment_labels",
    "propagate_binding_negatives",
    "reconcile_sources",
    "remove_leakage",
    "filter_datasets",
)
_STAGE_ORDER = {name: i for i, name in enumerate(("extract",) + STAGES)}


def compound_key(raw: str) -> str:
    return raw.strip().upper()


@dataclass(frozen=True)
class ActivityRecord:
    source: Source
    target_id: str
    compound_id: str
    smiles: str
    endpoint: Endpoint
    value_nM: float
    assay_meta: tuple[tuple[str, str], ...] = ()
    row: int | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.value_nM > 0:
            raise CurationError(f"non-positive value {self.value_nM}", stage="binarize", row=self.row)


@dataclass(frozen=True)
class BinaryLabelRecord:
    target_id: str
    compound_id: str
    task: Task
    label: int
    smiles: str = ""
    sources: tuple[str, ...] = ()
    provenance: tuple[str, ...] = ()

    @property
    def key(self) -> tuple[str, str, Task]:
        return (self.compound_id, self.target_id, self.task)

    @property
    def pair(self) -> tuple[str, str]:
        return (self.compound_id, self.target_id)

    def noted(self, note: str) -> BinaryLabelRecord:
        return replace(self, provenance=self.provenance + (note,))


@dataclass(frozen=True)
class ProvenanceEntry:
    stage: str
    action: str  # drop, add, merge, flag, skip
    source: str
    target_id: str
    compound_id: str
    task: str
    label: str
    reason: str

    def sort_key(self) -> tuple:
        return (_STAGE_ORDER.get(self.stage, 99), self.target_id, self.compound_id, self.task, self.action, self.source)


class ProvenanceLog:
    def __init__(self) -> None:
        self.entries: list[ProvenanceEntry] = []

    def record(self, stage: str, action: str, rec: BinaryLabelRecord, reason: str) -> None:
        self.entries.append(
            ProvenanceEntry(stage, action, "+".join(rec.sources), rec.target_id, rec.compound_id,
                            rec.task.value, str(rec.label), reason)
        )

    def skip(self, stage: str, source: str, target_id: str, compound_id: str, reason: str) -> None:
        self.entries.append(ProvenanceEntry(stage, "skip", source, target_id, compound_id, "", "", reason))

    def by_stage(self, stage: str) -> list[ProvenanceEntry]:
        return [e for e in self.entries if e.stage == stage]

    def sorted(self) -> list[ProvenanceEntry]:
        return sorted(self.entries, key=ProvenanceEntry.sort_key)


def _sorted(records: Iterable[BinaryLabelRecord]) -> list[BinaryLabelRecord]:
    return sorted(records, key=lambda r: (r.target_id, r.task.value, r.compound_id, r.sources))


def _fmt_value(v: float) -> str:
    return f"{v:g}"


def binarize(r: ActivityRecord, threshold_nM: float = DEFAULT_THRESHOLD_NM) -> BinaryLabelRecord:
    """Label 1 iff the potency value is strictly below the threshold."""
    if not r.value_nM > 0:
        raise CurationError(f"non-positive value {r.value_nM}", stage="binarize", row=r.row)
    label = 1 if r.value_nM < threshold_nM else 0
    op = "<" if label else ">="
    return BinaryLabelRecord(
        target_id=r.target_id,
        compound_id=compound_key(r.compound_id),
        task=ENDPOINT_TASK[r.endpoint],
        label=label,
        smiles=r.smiles,
        sources=(r.source.value,),
        provenance=(f"binarize: {r.endpoint.value}={_fmt_value(r.value_nM)}nM {op} {_fmt_value(threshold_nM)}nM",),
    )


def dedup(records: Sequence[BinaryLabelRecord], log: ProvenanceLog | None = None) -> list[BinaryLabelRecord]:
    """Collapse exact duplicates; drop same-source keys whose labels disagree."""
    groups: dict[tuple, list[BinaryLabelRecord]] = defaultdict(list)
    for r in records:
        groups[(r.sources, r.key)].append(r)
    out = []
    for group in groups.values():
        labels = {r.label for r in group}
        if len(labels) > 1:
            for r in group:
                if log is not None:
                    log.record("dedup", "drop", r, "intra-source conflict")
            continue
        first = group[0]
        if len(group) > 1:
            first = first.noted(f"dedup: collapsed {len(group)} records")
            if log is not None:
                log.record("dedup", "merge", first, f"collapsed {len(group)} duplicate records")
        out.append(first)
    return _sorted(out)


def resolve_functional_conflicts(
    records: Sequence[BinaryLabelRecord], log: ProvenanceLog | None = None
) -> tuple[list[BinaryLabelRecord], list[tuple[str, str]]]:
    """Remove pairs that are positive for both activation and inhibition."""
    positive_tasks: dict[tuple[str, str], set[Task]] = defaultdict(set)
    for r in records:
        if r.label == 1:
            positive_tasks[r.pair].add(r.task)
    conflicted = {p for p, tasks in positive_tasks.items() if {Task.ACTIVATION, Task.INHIBITION} <= tasks}
    kept = []
    for r in records:
        if r.pair in conflicted and r.task in _OPPOSITE and r.label == 1:
            if log is not None:
                log.record("resolve_functional_conflicts", "drop", r, "positive in both activation and inhibition")
            continue
        kept.append(r)
    return kept, sorted(conflicted)


def augment_labels(records: Sequence[BinaryLabelRecord], log: ProvenanceLog | None = None) -> list[BinaryLabelRecord]:
    """A positive activation implies a negative inhibition, and vice versa.

    Implied labels are only added where no record exists for that key;
    explicit labels always win.
    """
    by_key = {r.key: r for r in records}
    added = []
    for r in _sorted(records):
        if r.label != 1 or r.task not in _OPPOSITE:
            continue
        other = _OPPOSITE[r.task]
        key = (r.compound_id, r.target_id, other)
        existing = by_key.get(key)
        if existing is not None:
            if existing.label == 1 and log is not None:
                log.record("augment_labels", "flag", existing, f"explicit positive kept over label implied by {r.task.value}-positive")
            continue
        new = BinaryLabelRecord(
            r.target_id, r.compound_id, other, 0, r.smiles, r.sources,
            (f"augmentation: implied by {r.task.value}-positive",),
        )
        by_key[key] = new
        added.append(new)
        if log is not None:
            log.record("augment_labels", "add", new, f"implied by {r.task.value}-positive")
    return _sorted(list(records) + added)


def propagate_binding_negatives(
    records: Sequence[BinaryLabelRecord], log: ProvenanceLog | None = None
) -> list[BinaryLabelRecord]:
    """A negative binding label implies negative activation and inhibition.

    Positive binding labels propagate nothing.
    """
    by_key = {r.key: r for r in records}
    added = []
    for r in _sorted(records):
        if r.task is not Task.BINDING or r.label != 0:
            continue
        for task in (Task.ACTIVATION, Task.INHIBITION):
            key = (r.compound_id, r.target_id, task)
            existing = by_key.get(key)
            if existing is not None:
                if existing.label == 1 and log is not None:
                    log.record("propagate_binding_negatives", "flag", existing,
                               "explicit positive kept over binding-negative propagation")
                continue
            new = BinaryLabelRecord(
                r.target_id, r.compound_id, task, 0, r.smiles, r.sources,
                ("propagation: implied by binding-negative",),
            )
            by_key[key] = new
            added.append(new)
            if log is not None:
                log.record("propagate_binding_negatives", "add", new, "implied by binding-negative")
    return _sorted(list(records) + added)


def _collapse_source(records: Sequence[BinaryLabelRecord], name: str, log: ProvenanceLog | None):
    groups: dict[tuple, list[BinaryLabelRecord]] = defaultdict(list)
    for r in records:
        groups[r.key].append(r)
    out = {}
    for key, group in groups.items():
        if len({r.label for r in group}) > 1:
            for r in group:
                if log is not None:
                    log.record("reconcile_sources", "drop", r, f"intra-source conflict in {name}")
            continue
        out[key] = group[0]
    return out


def reconcile_sources(
    chembl_records: Sequence[BinaryLabelRecord],
    evebio_records: Sequence[BinaryLabelRecord],
    log: ProvenanceLog | None = None,
) -> list[BinaryLabelRecord]:
    """Merge the two sources; on disagreement the EveBIO label wins."""
    chembl = _collapse_source(chembl_records, "chembl", log)
    evebio = _collapse_source(evebio_records, "evebio", log)
    out = []
    for key in sorted(chembl.keys() | evebio.keys(), key=lambda k: (k[1], k[2].value, k[0])):
        c, e = chembl.get(key), evebio.get(key)
        if c is None or e is None:
            out.append(c or e)
        elif c.label == e.label:
            sources = tuple(sorted(set(c.sources) | set(e.sources)))
            out.append(replace(c, sources=sources, provenance=c.provenance + e.provenance + ("reconcile: sources agree",)))
        else:
            if log is not None:
                log.record("reconcile_sources", "drop", c, f"evebio-override: evebio label {e.label}")
            out.append(e.noted(f"evebio-override: chembl label {c.label} removed"))
    return _sorted(out)


def remove_leakage(
    records: Sequence[BinaryLabelRecord], dili_compounds: Iterable[str], log: ProvenanceLog | None = None
) -> list[BinaryLabelRecord]:
    """Drop every record whose compound appears anywhere in the DILI collection."""
    banned = {compound_key(k) for k in dili_compounds}
    out = []
    for r in records:
        if r.compound_id in banned:
            if log is not None:
                log.record("remove_leakage", "drop", r, "compound in DILI collection")
            continue
        out.append(r)
    return out


@dataclass(frozen=True)
class DatasetReport:
    target_id: str
    task: Task
    n_total: int
    n_positive: int
    n_negative: int
    majority_fraction: float
    accepted: bool
    rejection_reason: str | None = None


def filter_datasets(records: Sequence[BinaryLabelRecord]) -> list[DatasetReport]:
    """Accept a (target, task) dataset iff majority < 90% and minority > 20."""
    groups: dict[tuple[str, Task], list[int]] = defaultdict(lambda: [0, 0])
    for r in records:
        groups[(r.target_id, r.task)][r.label] += 1
    reports = []
    for (target, task), (n_neg, n_pos) in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        n = n_neg + n_pos
        majority = max(n_neg, n_pos) / n
        reasons = []
        if not majority < MAX_MAJORITY_FRACTION:
            reasons.append(f"majority fraction {majority:.4f} >= {MAX_MAJORITY_FRACTION:.2f}")
        if not min(n_neg, n_pos) > MIN_MINORITY:
            reasons.append(f"minority count {min(n_neg, n_pos)} <= {MIN_MINORITY}")
        reports.append(
            DatasetReport(target, task, n, n_pos, n_neg, majority, not reasons, "; ".join(reasons) or None)
        )
    return reports


@dataclass
class CurationResult:
    records: list[BinaryLabelRecord]  # all records surviving leakage removal
    reports: list[DatasetReport]
    log: ProvenanceLog
    conflicted_pairs: list[tuple[str, str]] = field(default_factory=list)

    def accepted(self) -> dict[tuple[str, Task], list[BinaryLabelRecord]]:
        ok = {(r.target_id, r.task) for r in self.reports if r.accepted}
        out: dict[tuple[str, Task], list[BinaryLabelRecord]] = defaultdict(list)
        for rec in self.records:
            if (rec.target_id, rec.task) in ok:
                out[(rec.target_id, rec.task)].append(rec)
        return dict(out)


class CurationPipeline:
    """Runs the stages in their fixed order; calling one out of turn raises."""

    def __init__(
        self,
        threshold_nM: float = DEFAULT_THRESHOLD_NM,
        target_map: Mapping[str, str] | None = None,
        dili_compounds: Iterable[str] = (),
    ):
        if not threshold_nM > 0:
            raise InputError(f"threshold must be positive, got {threshold_nM}")
        self.threshold_nM = threshold_nM
        self.target_map = dict(target_map or {})
        self.dili_compounds = {compound_key(k) for k in dili_compounds}
        self.log = ProvenanceLog()
        self._next = 0
        self._chembl: list[BinaryLabelRecord] = []
        self._evebio: list[BinaryLabelRecord] = []
        self._merged: list[BinaryLabelRecord] = []
        self._conflicted: list[tuple[str, str]] = []

    def _enter(self, stage: str) -> None:
        expected = STAGES[self._next] if self._next < len(STAGES) else None
        if stage != expected:
            raise StageOrderError(f"stage {stage!r} called out of order; next stage is {expected!r}")
        self._next += 1

    def binarize(self, records: Sequence[ActivityRecord]) -> None:
        self._enter("binarize")
        for r in records:
            if r.source is Source.EVEBIO:
                mapped = self.target_map.get(r.target_id)
                if mapped is not None:
                    r = replace(r, target_id=mapped)
            b = binarize(r, self.threshold_nM)
            (self._evebio if r.source is Source.EVEBIO else self._chembl).append(b)

    def dedup(self) -> None:
        self._enter("dedup")
        self._chembl = dedup(self._chembl, self.log)
        self._evebio = dedup(self._evebio, self.log)

    def resolve_functional_conflicts(self) -> None:
        self._enter("resolve_functional_conflicts")
        self._chembl, self._conflicted = resolve_functional_conflicts(self._chembl, self.log)

    def augment_labels(self) -> None:
        self._enter("augment_labels")
        self._chembl = augment_labels(self._chembl, self.log)

    def propagate_binding_negatives(self) -> None:
        self._enter("propagate_binding_negatives")
        self._chembl = propagate_binding_negatives(self._chembl, self.log)

    def reconcile_sources(self) -> None:
        self._enter("reconcile_sources")
        self._merged = reconcile_sources(self._chembl, self._evebio, self.log)

    def remove_leakage(self) -> None:
        self._enter("remove_leakage")
        self._merged = remove_leakage(self._merged, self.dili_compounds, self.log)

    def filter_datasets(self) -> CurationResult:
        self._enter("filter_datasets")
        reports = filter_datasets(self._merged)
        for rep in reports:
            if not rep.accepted:
                self.log.entries.append(
                    ProvenanceEntry("filter_datasets", "reject", "", rep.target_id, "", rep.task.value, "",
                                    rep.rejection_reason or "")
                )
        return CurationResult(self._merged, reports, self.log, self._conflicted)

    def run(self, records: Sequence[ActivityRecord]) -> CurationResult:
        self.binarize(records)
        self.dedup()
        self.resolve_functional_conflicts()
        self.augment_labels()
        self.propagate_binding_negatives()
        self.reconcile_sources()
        self.remove_leakage()
        return self.filter_datasets()


# --- file I/O ---------------------------------------------------------------

REQUIRED_COLUMNS = ("source", "target_id", "compound_id", "smiles", "endpoint", "value_nM")
_NUMBER = re.compile(r"^[+]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


def _delimiter(path: Path) -> str:
    return "\t" if path.suffix.lower() in (".tsv", ".tab") else ","


def read_activity_table(path: str | Path, log: ProvenanceLog | None = None) -> list[ActivityRecord]:
    """Read the delimited activity table.

    Rows with an endpoint other than IC50/EC50/Kd are skipped (and logged);
    malformed rows abort with the row number.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=_delimiter(path))
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if header and missing:
            raise CurationError(f"missing columns {missing}", stage="extract")
        out = []
        for rowno, row in enumerate(reader, 2):
            src_raw = (row.get("source") or "").strip().lower()
            try:
                source = Source(src_raw)
            except ValueError:
                raise CurationError(f"unknown source {row.get('source')!r}", stage="extract", row=rowno) from None
            target = (row.get("target_id") or "").strip()
            cid = (row.get("compound_id") or "").strip()
            if not target or not cid:
                raise CurationError("empty target_id or compound_id", stage="extract", row=rowno)
            endpoint = _ENDPOINT_BY_FOLD.get((row.get("endpoint") or "").strip().casefold())
            if endpoint is None:
                if log is not None:
                    log.skip("extract", source.value, target, compound_key(cid),
                             f"endpoint {row.get('endpoint')!r} not retained")
                continue
            raw_value = (row.get("value_nM") or "").strip()
            if not _NUMBER.match(raw_value):
                raise CurationError(f"value_nM {raw_value!r} is not a plain number in nM", stage="extract", row=rowno)
            value = float(raw_value)
            if not value > 0:
                raise CurationError(f"non-positive value_nM {raw_value!r}", stage="extract", row=rowno)
            meta = tuple(sorted((k, v) for k, v in row.items() if k not in REQUIRED_COLUMNS and k is not None))
            out.append(ActivityRecord(source, target, cid, (row.get("smiles") or "").strip(), endpoint, value, meta, rowno))
    return out


def read_target_map(path: str | Path) -> dict[str, str]:
    """Two columns: EveBIO target id, common target id. A header row is allowed."""
    path = Path(path)
    out: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rowno, row in enumerate(csv.reader(fh, delimiter=_delimiter(path)), 1):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise CurationError("mapping rows need exactly two columns", stage="extract", row=rowno)
            a, b = row[0].strip(), row[1].strip()
            if rowno == 1 and a.lower().startswith("evebio"):
                continue
            if a in out and out[a] != b:
                raise CurationError(f"target {a!r} mapped twice", stage="extract", row=rowno)
            out[a] = b
    return out


def read_compound_keys(path: str | Path) -> set[str]:
    """DILI collection keys: a JSONL file with ``inchikey`` fields or one key per line."""
    path = Path(path)
    keys = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if path.suffix == ".jsonl":
                keys.add(compound_key(str(json.loads(line)["inchikey"])))
            else:
                keys.add(compound_key(line))
    return keys


def _safe_name(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", s)


def write_outputs(result: CurationResult, out_dir: str | Path) -> list[Path]:
    """Write per-dataset tables, the dataset report and the provenance log."""
    out_dir = Path(out_dir)
    ds_dir = out_dir / "datasets"
    ds_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for (target, task), recs in sorted(result.accepted().items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        p = ds_dir / f"{_safe_name(target)}__{task.value}.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["compound_id", "smiles", "label", "sources", "provenance"])
            for r in sorted(recs, key=lambda r: r.compound_id):
                w.writerow([r.compound_id, r.smiles, r.label, "+".join(r.sources), " | ".join(r.provenance)])
        written.append(p)
    p = out_dir / "report.csv"
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target_id", "task", "n_total", "n_positive", "n_negative", "majority_fraction", "accepted", "rejection_reason"])
        for r in result.reports:
            w.writerow([r.target_id, r.task.value, r.n_total, r.n_positive, r.n_negative,
                        f"{r.majority_fraction:.4f}", str(r.accepted).lower(), r.rejection_reason or ""])
    written.append(p)
    p = out_dir / "provenance.csv"
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "action", "source", "target_id", "compound_id", "task", "label", "reason"])
        for e in result.log.sorted():
            w.writerow([e.stage, e.action, e.source, e.target_id, e.compound_id, e.task, e.label, e.reason])
    written.append(p)
    return written
