"""Uncertainty sampling and the schedules mixing it with MORPH updates."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from morphdrift.data import DriftStream, MonthBatch
from morphdrift.errors import ConfigError
from morphdrift.metrics import MetricsRecord
from morphdrift.morph import (
    AdaptationState,
    MorphConfig,
    evaluate_month,
    fine_tune,
    pseudo_batch,
    select_samples,
)
from morphdrift.seeding import derive_seed


class Schedule(str, enum.Enum):
    STATIC = "static"
    MORPH_ONLY = "MORPH_only"
    AL_EVERY_MONTH = "AL_every_month"
    ALTERNATE = "alternate_AL_and_MORPH"
    AL_PLUS_MORPH_RESIDUAL = "AL_plus_MORPH_residual"

    @property
    def uses_al(self) -> bool:
        return self in (Schedule.AL_EVERY_MONTH, Schedule.ALTERNATE, Schedule.AL_PLUS_MORPH_RESIDUAL)

    @property
    def uses_morph(self) -> bool:
        return self in (Schedule.MORPH_ONLY, Schedule.ALTERNATE, Schedule.AL_PLUS_MORPH_RESIDUAL)


@dataclass
class ALConfig:
    budget_per_update: int = 100
    schedule: Schedule = Schedule.AL_EVERY_MONTH

    def __post_init__(self):
        self.schedule = Schedule(self.schedule)

    def validate(self) -> None:
        if self.schedule.uses_al and self.budget_per_update < 1:
            raise ConfigError("budget_per_update must be >= 1 for schedules with active learning")


@dataclass
class AnnotationEvent:
    month: int
    indices: list[int]
    labels: list[int]


@dataclass
class ScheduleResult:
    history: list[MetricsRecord]
    annotations: list[AnnotationEvent] = field(default_factory=list)
    probs: list[np.ndarray] = field(default_factory=list)


@dataclass
class MonthOutcome:
    record: MetricsRecord
    probs: np.ndarray
    event: AnnotationEvent | None = None


def select_uncertain(probs, budget: int) -> np.ndarray:
    """Indices of the ``budget`` rows with the lowest top-class probability.

    Ties go to the lower index; the result is sorted ascending.
    """
    if budget < 1:
        raise ConfigError(f"budget must be >= 1, got {budget}")
    p = np.asarray(probs, dtype=np.float64)
    n = p.shape[0]
    if budget >= n:
        return np.arange(n)
    order = np.argsort(p.max(axis=1), kind="stable")
    return np.sort(order[:budget])


def annotate(batch: MonthBatch, indices: np.ndarray) -> AnnotationEvent:
    """Reveal ground truth for ``indices`` only."""
    labels = batch.data.labels[indices]
    return AnnotationEvent(batch.month, [int(i) for i in indices], [int(v) for v in labels])


def month_action(schedule: Schedule, position: int) -> str:
    """What happens in the ``position``-th test month (0-based).

    Returns one of "none", "morph", "al", "al+morph".
    """
    if schedule is Schedule.STATIC:
        return "none"
    if schedule is Schedule.MORPH_ONLY:
        return "morph"
    if schedule is Schedule.AL_EVERY_MONTH:
        return "al"
    if schedule is Schedule.ALTERNATE:
        return "al" if position % 2 == 0 else "morph"
    return "al+morph"


def step_month(state: AdaptationState, batch: MonthBatch, action: str, al: ALConfig, morph: MorphConfig,
               seed: int) -> MonthOutcome:
    """Evaluate ``batch`` first, then apply ``action`` to ``state``."""
    state.check_next(batch.month)
    probs, record = evaluate_month(state.model, batch)
    event = None
    selection = None
    if action in ("al", "al+morph"):
        picked = select_uncertain(probs, al.budget_per_update)
        event = annotate(batch, picked)
        annotated = batch.data.subset(picked)
        annotated.labels = np.asarray(event.labels, dtype=np.int64)
        state.add_labeled(annotated)
    if action in ("morph", "al+morph"):
        candidates = None
        if event is not None:
            candidates = np.setdiff1d(np.arange(len(batch)), event.indices)
        selection = select_samples(probs, morph, derive_seed(seed, "select"), candidates=candidates,
                                   month=batch.month)
    if action != "none":
        pseudo = pseudo_batch(batch, selection) if selection is not None else None
        fine_tune(state, pseudo, morph.fine_tune_epochs, morph.lambda_u, derive_seed(seed, "fine-tune"))
    record = record.with_counts(
        annotations_used=len(event.indices) if event else 0,
        pseudo_malware=len(selection.malware) if selection else 0,
        pseudo_benign=len(selection.benign) if selection else 0,
    )
    state.history.append(record)
    state.last_month = batch.month
    return MonthOutcome(record, probs, event)


def run_schedule(state: AdaptationState, stream: DriftStream, al: ALConfig, morph: MorphConfig,
                 seed: int) -> ScheduleResult:
    al.validate()
    if al.schedule.uses_morph:
        morph.validate()
    result = ScheduleResult([])
    for pos, batch in enumerate(stream.test_months):
        out = step_month(state, batch, month_action(al.schedule, pos), al, morph, derive_seed(seed, batch.month))
        result.history.append(out.record)
        result.probs.append(out.probs)
        if out.event is not None:
            result.annotations.append(out.event)
    return result
