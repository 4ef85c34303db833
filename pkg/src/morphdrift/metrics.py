"""Per-month detection metrics with malware as the positive class."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from morphdrift.errors import InputError
from morphdrift.nn import predict_proba

METRIC_COLUMNS = ("month", "tp", "fp", "tn", "fn", "f1", "fpr", "fnr",
                  "annotations_used", "pseudo_malware", "pseudo_benign")
CONFIDENCE_COLUMNS = ("month", "max_prob", "correct", "true_label", "pred_label")


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class MetricsRecord:
    month: int
    tp: int
    fp: int
    tn: int
    fn: int
    f1: float
    fpr: float
    fnr: float
    annotations_used: int = 0
    pseudo_malware: int = 0
    pseudo_benign: int = 0

    @classmethod
    def from_counts(cls, month, tp, fp, tn, fn, **extra) -> MetricsRecord:
        return cls(month, tp, fp, tn, fn, _ratio(2 * tp, 2 * tp + fp + fn), _ratio(fp, fp + tn),
                   _ratio(fn, fn + tp), **extra)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return _ratio(self.tp + self.tn, self.n)

    def with_counts(self, **changes) -> MetricsRecord:
        d = asdict(self)
        d.update(changes)
        return MetricsRecord(**d)


def compute_metrics(predictions, truths, month: int = 0, **extra) -> MetricsRecord:
    """Confusion counts and F1/FPR/FNR; empty denominators give 0."""
    pred = np.asarray(predictions).astype(np.int64).ravel()
    true = np.asarray(truths).astype(np.int64).ravel()
    if pred.shape != true.shape:
        raise InputError(f"{pred.size} predictions but {true.size} truths")
    if not (np.isin(pred, (0, 1)).all() and np.isin(true, (0, 1)).all()):
        raise InputError("predictions and truths must be 0 (benign) or 1 (malware)")
    tp = int(np.count_nonzero((pred == 1) & (true == 1)))
    fp = int(np.count_nonzero((pred == 1) & (true == 0)))
    tn = int(np.count_nonzero((pred == 0) & (true == 0)))
    fn = int(np.count_nonzero((pred == 0) & (true == 1)))
    return MetricsRecord.from_counts(int(month), tp, fp, tn, fn, **extra)


@dataclass(frozen=True)
class Summary:
    mean_f1: float
    mean_fpr: float
    mean_fnr: float
    mean_accuracy: float
    delta_f1: float | None = None
    delta_fpr: float | None = None
    delta_fnr: float | None = None
    delta_accuracy: float | None = None


def summarize(history: list[MetricsRecord], reference: list[MetricsRecord] | None = None) -> Summary:
    """Unweighted means over months, plus deltas (run - reference)."""
    if not history:
        raise InputError("empty metrics history")

    def means(h):
        return (float(np.mean([r.f1 for r in h])), float(np.mean([r.fpr for r in h])),
                float(np.mean([r.fnr for r in h])), float(np.mean([r.accuracy for r in h])))

    f1, fpr, fnr, acc = means(history)
    if reference is None:
        return Summary(f1, fpr, fnr, acc)
    if [r.month for r in history] != [r.month for r in reference]:
        raise InputError(
            f"month mismatch: run has {[r.month for r in history]}, reference has {[r.month for r in reference]}"
        )
    rf1, rfpr, rfnr, racc = means(reference)
    return Summary(f1, fpr, fnr, acc, f1 - rf1, fpr - rfpr, fnr - rfnr, acc - racc)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(history: list[MetricsRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in history:
            w.writerow([_fmt(getattr(r, c)) for c in METRIC_COLUMNS])


def read_metrics_csv(path) -> list[MetricsRecord]:
    types = {f.name: f.type for f in fields(MetricsRecord)}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(METRIC_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise InputError(f"{path}: missing metric columns {sorted(missing)}")
        for row in reader:
            out.append(MetricsRecord(**{
                c: float(row[c]) if types[c] == "float" else int(row[c]) for c in METRIC_COLUMNS
            }))
    return out


@dataclass(frozen=True)
class ConfidenceRow:
    month: int
    max_prob: float
    correct: bool
    true_label: int
    pred_label: int


def confidence_rows(probs: np.ndarray, truths, month: int) -> list[ConfidenceRow]:
    probs = np.asarray(probs, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.int64)
    if probs.shape[0] != truths.shape[0]:
        raise InputError("probabilities and truths differ in length")
    pred = probs.argmax(axis=1)
    maxp = probs.max(axis=1)
    return [ConfidenceRow(int(month), float(maxp[i]), bool(pred[i] == truths[i]), int(truths[i]), int(pred[i]))
            for i in range(len(truths))]


def export_confidence(model, samples, month: int | None = None) -> list[ConfidenceRow]:
    """Max-probability rows for every sample of a ``SampleSet`` or ``MonthBatch``."""
    data = getattr(samples, "data", samples)
    probs = predict_proba(model, data.features)
    if month is None:
        return [r for m in np.unique(data.months)
                for r in confidence_rows(probs[data.months == m], data.labels[data.months == m], int(m))]
    return confidence_rows(probs, data.labels, month)


def write_confidence_csv(rows: list[ConfidenceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONFIDENCE_COLUMNS)
        for r in rows:
            w.writerow([r.month, repr(r.max_prob), int(r.correct), r.true_label, r.pred_label])


def read_confidence_csv(path) -> list[ConfidenceRow]:
    with open(Path(path), newline="") as fh:
        return [ConfidenceRow(int(r["month"]), float(r["max_prob"]), bool(int(r["correct"])),
                              int(r["true_label"]), int(r["pred_label"])) for r in csv.DictReader(fh)]
