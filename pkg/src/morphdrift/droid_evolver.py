"""Ensemble of passive-aggressive linear learners updated with their own votes.

A stand-in for the DroidEvolver++ comparison: five PA models vote with
weights; members that disagree with the ensemble on a sample are treated as
aging and nudged toward the ensemble label, which doubles as the
pseudo-label. There is no ground truth after initial training, so errors
made by the ensemble get reinforced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from morphdrift.data import MALWARE, MonthBatch, SampleSet
from morphdrift.errors import ConfigError, InputError, SequencingError
from morphdrift.metrics import MetricsRecord, compute_metrics
from morphdrift.seeding import derive_seed

DEFAULT_AGGRESSIVENESS = (0.001, 0.01, 0.1, 1.0, 10.0)


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float = 0.0
    C: float = math.inf

    def score(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def copy(self) -> LinearModel:
        return LinearModel(self.weights.copy(), self.bias, self.C)


def to_signed(labels) -> np.ndarray:
    return np.where(np.asarray(labels) == MALWARE, 1, -1)


def sign_label(score) -> np.ndarray:
    """+1 for strictly positive scores, -1 otherwise (zero counts as benign)."""
    return np.where(np.asarray(score) > 0, 1, -1)


def pa_update(model: LinearModel, x, y: int) -> LinearModel:
    """One passive-aggressive step with the bias folded in as a constant-1 feature.

    ``tau = min(C, loss / (||x||^2 + 1))`` with hinge loss ``max(0, 1 - y s(x))``.
    Updates ``model`` in place and returns it.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise InputError("non-finite feature vector")
    if y not in (-1, 1):
        raise InputError(f"y must be -1 or +1, got {y}")
    loss = max(0.0, 1.0 - y * float(x @ model.weights + model.bias))
    if loss > 0.0:
        tau = min(model.C, loss / (float(x @ x) + 1.0))
        model.weights += tau * y * x
        model.bias += tau * y
    return model


@dataclass
class DEEnsemble:
    models: list[LinearModel]
    model_weights: np.ndarray
    update: bool = True
    last_month: int | None = None
    # a member is retrained on its deviating samples only while its month
    # agreement rate is below this; 1.0 retrains every deviating member
    aging_threshold: float = 1.0

    def __post_init__(self):
        self.model_weights = np.asarray(self.model_weights, dtype=np.float64)
        if not 0 < self.aging_threshold <= 1:
            raise ConfigError(f"aging_threshold must be in (0, 1], got {self.aging_threshold}")
        if len(self.models) != len(self.model_weights):
            raise ConfigError("one weight per model is required")
        if (self.model_weights < 0).any() or abs(self.model_weights.sum() - 1.0) > 1e-9:
            raise ConfigError("model weights must be a probability vector")

    def copy(self) -> DEEnsemble:
        return DEEnsemble([m.copy() for m in self.models], self.model_weights.copy(), self.update, self.last_month,
                          self.aging_threshold)


@dataclass
class EnsemblePrediction:
    labels: np.ndarray  # (n,) in {-1, +1}
    member_labels: np.ndarray  # (n_models, n)
    scores: np.ndarray  # (n,)

    @property
    def deviating(self) -> np.ndarray:
        """Boolean (n_models, n): member disagrees with the ensemble label."""
        return self.member_labels != self.labels[None, :]


def ensemble_predict(ens: DEEnsemble, x) -> EnsemblePrediction:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if not np.isfinite(x).all():
        raise InputError("non-finite feature vector")
    member = np.stack([sign_label(m.score(x)) for m in ens.models])
    scores = ens.model_weights @ member
    return EnsemblePrediction(sign_label(scores), member, scores)


def init_ensemble(train: SampleSet, seed: int, aggressiveness=DEFAULT_AGGRESSIVENESS, epochs: int = 5,
                  update: bool = True, aging_threshold: float = 1.0) -> DEEnsemble:
    """Fit each member with PA passes over ``train`` in its own shuffled order."""
    if len(train) == 0:
        raise InputError("empty training set")
    if len(aggressiveness) != 5:
        raise ConfigError("the ensemble has exactly five members")
    y = to_signed(train.labels)
    models = []
    for k, C in enumerate(aggressiveness):
        m = LinearModel(np.zeros(train.dim), 0.0, float(C))
        rng = np.random.default_rng(derive_seed(seed, "de-member", k))
        for _ in range(epochs):
            for i in rng.permutation(len(train)):
                pa_update(m, train.features[i], int(y[i]))
        models.append(m)
    return DEEnsemble(models, np.full(len(models), 1.0 / len(models)), update, aging_threshold=aging_threshold)


def update_month(ens: DEEnsemble, batch: MonthBatch) -> tuple[DEEnsemble, MetricsRecord]:
    """Score ``batch``, record metrics, then retrain aging members on pseudo-labels.

    Returns a new ensemble; ``ens`` is left untouched.
    """
    if ens.last_month is not None and batch.month <= ens.last_month:
        raise SequencingError(f"month {batch.month} does not follow {ens.last_month}")
    x = batch.features
    pred = ensemble_predict(ens, x)
    record = compute_metrics(pred.labels == 1, batch.data.labels, batch.month)
    out = ens.copy()
    out.last_month = batch.month
    if not ens.update:
        return out, record

    pseudo = pred.labels
    agreement = (~pred.deviating).mean(axis=1)
    aging = [m for m, a in zip(out.models, agreement) if a < ens.aging_threshold]
    n_pseudo = np.zeros(2, dtype=int)
    for i in range(len(batch)):
        used = False
        for m in aging:
            if sign_label(m.score(x[i])) != pseudo[i]:
                pa_update(m, x[i], int(pseudo[i]))
                used = True
        n_pseudo[int(pseudo[i] == 1)] += used
    total = agreement.sum()
    out.model_weights = agreement / total if total > 0 else np.full(len(out.models), 1.0 / len(out.models))
    return out, record.with_counts(pseudo_malware=int(n_pseudo[1]), pseudo_benign=int(n_pseudo[0]))


@dataclass
class DERun:
    ensemble: DEEnsemble
    history: list[MetricsRecord] = field(default_factory=list)


def run_de(ens: DEEnsemble, months: list[MonthBatch]) -> DERun:
    run = DERun(ens)
    for batch in months:
        run.ensemble, rec = update_month(run.ensemble, batch)
        run.history.append(rec)
    return run
