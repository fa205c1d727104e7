"""Binary and ordinal classification metrics for DILI predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError
from .model import Compound, PredictionRecord, Severity, normalize_inchikey, severity_score

DEFAULT_THRESHOLD = 0.5

GRADES: tuple[Severity, ...] = tuple(Severity)

BINARY_COLUMNS: tuple[tuple[str, str], ...] = (
    ("roc_auc", "ROC-AUC"),
    ("balanced_accuracy", "Bal Acc"),
    ("mcc", "MCC"),
    ("sensitivity", "Sensitivity"),
    ("specificity", "Specificity"),
    ("f1", "F1"),
)


class SingleClassError(InputError):
    """ROC-AUC is undefined without both classes present."""


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic.

    Ties between a positive and a negative score count one half. Runs in
    O(n log n) via midranks.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise InputError("scores and labels must be 1-D and the same length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise InputError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC-AUC needs at least one positive and one negative label")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    # midrank of each tie block, 1-based
    boundaries = np.flatnonzero(np.diff(sorted_s)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [s.size]))
    ranks_sorted = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    ranks = np.empty_like(ranks_sorted)
    ranks[order] = ranks_sorted
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def binarize(score: float, threshold: float = DEFAULT_THRESHOLD) -> int:
    """1 iff ``score >= threshold``."""
    return 1 if score >= threshold else 0


@dataclass(frozen=True)
class BinaryConfusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: BinaryConfusion) -> BinaryConfusion:
        return BinaryConfusion(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def from_predictions(cls, predicted: Sequence[int], labels: Sequence[int]) -> BinaryConfusion:
        tp = fp = tn = fn = 0
        for p, y in zip(predicted, labels, strict=True):
            if p and y:
                tp += 1
            elif p:
                fp += 1
            elif y:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, tn, fn)

    def as_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class BinaryMetrics:
    balanced_accuracy: float | None
    mcc: float
    sensitivity: float | None
    specificity: float | None
    f1: float | None
    mcc_degenerate: bool = False


def binary_metrics(conf: BinaryConfusion) -> BinaryMetrics:
    tp, fp, tn, fn = conf.tp, conf.fp, conf.tn, conf.fn
    sens = tp / (tp + fn) if tp + fn else None
    spec = tn / (tn + fp) if tn + fp else None
    bal = (sens + spec) / 2 if sens is not None and spec is not None else None
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    degenerate = den == 0
    mcc = 0.0 if degenerate else (tp * tn - fp * fn) / math.sqrt(den)
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else None
    return BinaryMetrics(bal, mcc, sens, spec, f1, degenerate)


@dataclass(frozen=True)
class ScaleConfusion:
    """5x5 counts; rows are reference grades A-E, columns predicted grades."""

    matrix: np.ndarray
    missing: tuple[str, ...] = ()

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def collapse(self, threshold: float = DEFAULT_THRESHOLD) -> BinaryConfusion:
        """Binarize both axes via the severity score and sum into a 2x2 table."""
        bins = [binarize(severity_score(g), threshold) for g in GRADES]
        tp = fp = tn = fn = 0
        for i, ref in enumerate(bins):
            for j, pred in enumerate(bins):
                n = int(self.matrix[i, j])
                if ref and pred:
                    tp += n
                elif pred:
                    fp += n
                elif ref:
                    fn += n
                else:
                    tn += n
        return BinaryConfusion(tp, fp, tn, fn)

    def as_lists(self) -> list[list[int]]:
        return [[int(v) for v in row] for row in self.matrix]


def scale_confusion(
    predictions: Sequence[PredictionRecord],
    references: Sequence[tuple[str, Severity]],
) -> ScaleConfusion:
    """Tabulate reference vs. predicted grade, joined by normalized InChIKey.

    Reference keys without a severity prediction are listed in ``missing``
    rather than dropped silently.
    """
    by_key = {normalize_inchikey(p.inchikey): p for p in predictions}
    idx = {g: i for i, g in enumerate(GRADES)}
    mat = np.zeros((5, 5), dtype=np.int64)
    missing = []
    for key, grade in references:
        p = by_key.get(normalize_inchikey(key))
        if p is None or p.severity is None:
            missing.append(key)
            continue
        mat[idx[Severity(grade)], idx[p.severity]] += 1
    return ScaleConfusion(mat, tuple(missing))


@dataclass
class Coverage:
    evaluated: int
    missing: list[str] = field(default_factory=list)  # reference keys with no prediction
    extra: list[str] = field(default_factory=list)  # predictions with no reference

    def as_dict(self) -> dict:
        return {"evaluated": self.evaluated, "missing": self.missing, "extra": self.extra}


@dataclass
class ClassificationResult:
    n: int
    threshold: float
    roc_auc: float | None
    roc_auc_note: str | None
    confusion: BinaryConfusion
    metrics: BinaryMetrics
    scale: ScaleConfusion | None
    coverage: Coverage
    warnings: list[str] = field(default_factory=list)

    def row(self) -> dict[str, float | None]:
        m = self.metrics
        return {
            "roc_auc": self.roc_auc,
            "balanced_accuracy": m.balanced_accuracy,
            "mcc": m.mcc,
            "sensitivity": m.sensitivity,
            "specificity": m.specificity,
            "f1": m.f1,
        }


def evaluate_predictions(
    predictions: Sequence[PredictionRecord],
    compounds: Sequence[Compound],
    threshold: float = DEFAULT_THRESHOLD,
) -> ClassificationResult:
    """Score predictions over the intersection of prediction and reference keys."""
    if not 0.0 <= threshold <= 1.0:
        raise InputError(f"threshold {threshold} outside [0, 1]")
    preds: Mapping[str, PredictionRecord] = {p.inchikey: p for p in predictions}
    ref_keys = {c.inchikey for c in compounds}
    joined = [(c, preds[c.inchikey]) for c in compounds if c.inchikey in preds]
    coverage = Coverage(
        evaluated=len(joined),
        missing=sorted(c.inchikey for c in compounds if c.inchikey not in preds),
        extra=sorted(k for k in preds if k not in ref_keys),
    )
    warnings = []
    if coverage.missing:
        warnings.append(f"{len(coverage.missing)} reference compounds have no prediction")
    if coverage.extra:
        warnings.append(f"{len(coverage.extra)} predictions have no reference compound")
    for _, p in joined:
        if p.score_mismatch:
            warnings.append(f"{p.inchikey}: score disagrees with severity {p.severity.value}")
    scores = [p.effective_score for _, p in joined]
    labels = [c.binary_label for c, _ in joined]
    try:
        auc, note = roc_auc(scores, labels), None
    except SingleClassError as exc:
        auc, note = None, str(exc)
    conf = BinaryConfusion.from_predictions([binarize(s, threshold) for s in scores], labels)
    scale = None
    graded = [(c.inchikey, c.severity) for c, p in joined if c.severity is not None and p.severity is not None]
    if graded:
        scale = scale_confusion([p for _, p in joined], graded)
    return ClassificationResult(
        n=len(joined),
        threshold=threshold,
        roc_auc=auc,
        roc_auc_note=note,
        confusion=conf,
        metrics=binary_metrics(conf),
        scale=scale,
        coverage=coverage,
        warnings=warnings,
    )
