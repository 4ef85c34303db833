"""Pseudo-label self-training against drift.

Each month the current model scores the incoming batch (and is evaluated on
it before anything else happens), an asymmetric selector picks malware and
benign pseudo-labels, and the model is fine-tuned on the retained labeled
pool paired with those pseudo-labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from morphdrift.data import BENIGN, MALWARE, UNLABELED, MonthBatch, SampleSet
from morphdrift.errors import ConfigError, InputError, SequencingError
from morphdrift.metrics import MetricsRecord, compute_metrics
from morphdrift.nn import MLP, TrainBatch, predict_proba, train
from morphdrift.seeding import derive_seed


@dataclass
class MorphConfig:
    tau_m: float = 0.6
    tau_b: float | None = None
    n_m_cap: int | None = None
    lambda_u: float = 1.0
    fine_tune_epochs: int = 10

    def validate(self) -> None:
        if self.tau_m is None:
            raise ConfigError("morph.tau_m is required")
        if not 0.5 < self.tau_m < 1:
            raise ConfigError(f"tau_m must be in (0.5, 1), got {self.tau_m}")
        if self.tau_b is not None:
            if not 0.5 < self.tau_b <= 1:
                raise ConfigError(f"tau_b must be in (0.5, 1], got {self.tau_b}")
            if not self.tau_m < self.tau_b:
                raise ConfigError("tau_m must be smaller than tau_b")
        if self.n_m_cap is not None and self.n_m_cap < 1:
            raise ConfigError("n_m_cap must be a positive integer")
        if self.lambda_u < 0:
            raise ConfigError("lambda_u must be >= 0")
        if self.fine_tune_epochs < 1:
            raise ConfigError("fine_tune_epochs must be >= 1")


@dataclass
class PseudoLabelSet:
    malware: list[tuple[int, float]]
    benign: list[tuple[int, float]]
    month: int = 0

    def __len__(self) -> int:
        return len(self.malware) + len(self.benign)

    @property
    def indices(self) -> np.ndarray:
        return np.array([i for i, _ in self.malware] + [i for i, _ in self.benign], dtype=np.int64)

    @property
    def targets(self) -> np.ndarray:
        return np.array([MALWARE] * len(self.malware) + [BENIGN] * len(self.benign), dtype=np.int64)


def _check_probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise InputError(f"expected (n, 2) probability rows, got shape {p.shape}")
    if p.size and (not np.isfinite(p).all() or (p < 0).any() or (np.abs(p.sum(axis=1) - 1) > 1e-6).any()):
        raise InputError("probability rows must be non-negative and sum to 1")
    return p


def pseudo_label(probs, tau: float) -> np.ndarray:
    """Argmax class where the top probability is at least ``tau``, else -1."""
    if not 0.5 < tau <= 1:
        raise ConfigError(f"tau must be in (0.5, 1], got {tau}")
    p = _check_probs(probs)
    return np.where(p.max(axis=1) >= tau, p.argmax(axis=1), UNLABELED)


def select_samples(probs, config: MorphConfig, seed: int, candidates=None, month: int = 0) -> PseudoLabelSet:
    """Asymmetric malware/benign pseudo-label selection.

    Malware: a uniform random draw from the predicted-malware samples whose
    confidence exceeds ``tau_m``. Benign: the most confident predicted-benign
    samples (above ``tau_b`` when set), as many as malware picks. If the
    benign side runs short, both sides shrink to the smaller count.
    ``candidates`` restricts selection to those row indices.
    """
    p = _check_probs(probs)
    idx = np.arange(p.shape[0]) if candidates is None else np.asarray(candidates, dtype=np.int64)
    pc = p[idx]
    pred = pc.argmax(axis=1)
    conf = pc.max(axis=1)

    mal = idx[(pred == MALWARE) & (conf > config.tau_m)]
    mal_conf = p[mal, MALWARE]
    ben_mask = pred == BENIGN
    if config.tau_b is not None:
        ben_mask &= conf > config.tau_b
    ben = idx[ben_mask]
    ben_conf = p[ben, BENIGN]

    n_pick = len(mal) if config.n_m_cap is None else min(len(mal), config.n_m_cap)
    n_pick = min(n_pick, len(ben))
    if n_pick == 0:
        return PseudoLabelSet([], [], month)

    rng = np.random.default_rng(seed)
    mal_pick = np.sort(rng.choice(len(mal), size=n_pick, replace=False))
    ben_order = np.lexsort((ben, -ben_conf))[:n_pick]
    return PseudoLabelSet(
        [(int(mal[i]), float(mal_conf[i])) for i in mal_pick],
        [(int(ben[i]), float(ben_conf[i])) for i in ben_order],
        month,
    )


@dataclass
class AdaptationState:
    """Mutable per-experiment state threaded through the monthly loop."""

    model: MLP
    labeled_pool: SampleSet
    history: list[MetricsRecord] = field(default_factory=list)
    batch_size: int = 64
    learning_rate: float = 1e-3
    last_month: int | None = None
    n_original: int = 0

    def __post_init__(self):
        if self.n_original == 0:
            self.n_original = len(self.labeled_pool)
        if (self.labeled_pool.labels == UNLABELED).any():
            raise InputError("labeled pool contains unlabeled samples")

    def check_next(self, month: int) -> None:
        if self.last_month is not None and month <= self.last_month:
            raise SequencingError(f"month {month} does not follow last processed month {self.last_month}")

    def add_labeled(self, samples: SampleSet) -> None:
        if len(samples):
            self.labeled_pool = SampleSet.concat([self.labeled_pool, samples])


def evaluate_month(model: MLP, batch: MonthBatch) -> tuple[np.ndarray, MetricsRecord]:
    """Score ``batch`` with ``model``; the only place test labels are read."""
    probs = predict_proba(model, batch.features)
    return probs, compute_metrics(probs.argmax(axis=1), batch.data.labels, batch.month)


def fine_tune(state: AdaptationState, pseudo: TrainBatch | None, epochs: int, lambda_u: float, seed: int) -> None:
    pool = state.labeled_pool
    labeled = TrainBatch(pool.features, pool.labels)
    result = train(state.model, labeled, pseudo, epochs=epochs, batch_size=state.batch_size,
                   lambda_u=lambda_u, seed=seed, learning_rate=state.learning_rate, check_finite=True)
    state.model = result.model


def pseudo_batch(batch: MonthBatch, selection: PseudoLabelSet) -> TrainBatch | None:
    if len(selection) == 0:
        return None
    return TrainBatch(batch.features[selection.indices], selection.targets)


def adapt_month(state: AdaptationState, batch: MonthBatch, config: MorphConfig, seed: int) -> AdaptationState:
    """Evaluate on ``batch``, then fine-tune on it with pseudo-labels."""
    state.check_next(batch.month)
    probs, record = evaluate_month(state.model, batch)
    selection = select_samples(probs, config, derive_seed(seed, "select"), month=batch.month)
    fine_tune(state, pseudo_batch(batch, selection), config.fine_tune_epochs, config.lambda_u,
              derive_seed(seed, "fine-tune"))
    state.history.append(record.with_counts(pseudo_malware=len(selection.malware),
                                            pseudo_benign=len(selection.benign)))
    state.last_month = batch.month
    return state
