"""Experiment wiring: config, initial training, scenario replay, artifacts."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from morphdrift.active import ALConfig, AnnotationEvent, Schedule, run_schedule
from morphdrift.data import DriftStream, SyntheticConfig, gen_synthetic, limit_families, load_stream, standardize_stream
from morphdrift.droid_evolver import DEFAULT_AGGRESSIVENESS, DEEnsemble, init_ensemble, run_de
from morphdrift.errors import ConfigError
from morphdrift.metrics import (
    ConfidenceRow,
    MetricsRecord,
    compute_metrics,
    confidence_rows,
    write_confidence_csv,
    write_metrics_csv,
)
from morphdrift.morph import AdaptationState, MorphConfig
from morphdrift.nn import MLP, AdamState, TrainBatch, init_model, log_softmax, logits, predict_proba, save_model, train
from morphdrift.seeding import derive_seed

log = logging.getLogger(__name__)

SCENARIOS = ("static", "morph", "al_monthly", "al_alternate", "al_plus_morph",
             "de_baseline", "de_baseline_static", "family_limited")

SCHEDULE_FOR = {
    "static": Schedule.STATIC,
    "morph": Schedule.MORPH_ONLY,
    "al_monthly": Schedule.AL_EVERY_MONTH,
    "al_alternate": Schedule.ALTERNATE,
    "al_plus_morph": Schedule.AL_PLUS_MORPH_RESIDUAL,
}

SYNTHETIC_PRESETS = {
    "default": SyntheticConfig(),
    "severe": SyntheticConfig(rotation_deg=20.0),
    "families": SyntheticConfig(rotation_deg=0.0, n_families=10, family_spread_deg=280.0, family_decay=0.6),
}


@dataclass
class ModelConfig:
    hidden_dims: list[int] = field(default_factory=lambda: [512, 384, 256, 128])
    dropout: float = 0.2
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 10


@dataclass
class DEConfig:
    aggressiveness: list[float] = field(default_factory=lambda: list(DEFAULT_AGGRESSIVENESS))
    epochs: int = 5
    aging_threshold: float = 1.0


@dataclass
class ExperimentConfig:
    scenario: str = "static"
    seed: int | None = None
    data_path: str | None = None
    data_format: str | None = None
    synthetic: SyntheticConfig | None = None
    synthetic_preset: str | None = None
    top_k: int | None = None
    inner_scenario: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    morph: MorphConfig = field(default_factory=lambda: MorphConfig(tau_m=None))
    al: ALConfig = field(default_factory=ALConfig)
    de: DEConfig = field(default_factory=DEConfig)
    output_dir: str | None = None

    @property
    def effective_scenario(self) -> str:
        return self.inner_scenario if self.scenario == "family_limited" else self.scenario

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.seed is None:
            raise ConfigError("seed is required")
        if self.scenario == "family_limited":
            if self.top_k is None:
                raise ConfigError("top_k is required for the family_limited scenario")
            if self.top_k < 1:
                raise ConfigError("top_k must be >= 1")
            if self.inner_scenario is None:
                raise ConfigError("inner_scenario is required for the family_limited scenario")
            if self.inner_scenario not in SCENARIOS or self.inner_scenario == "family_limited":
                raise ConfigError(f"invalid inner_scenario {self.inner_scenario!r}")
        if (self.data_path is None) == (self.synthetic is None):
            raise ConfigError("exactly one of data_path or synthetic must be given")
        if self.synthetic is not None:
            self.synthetic.validate()
        scen = self.effective_scenario
        if scen in SCHEDULE_FOR:
            sched = SCHEDULE_FOR[scen]
            if sched.uses_morph:
                if self.morph.tau_m is None:
                    raise ConfigError("morph.tau_m is required for this scenario")
                self.morph.validate()
            elif self.morph.fine_tune_epochs < 1:
                raise ConfigError("morph.fine_tune_epochs must be >= 1")
            if sched.uses_al and self.al.budget_per_update < 1:
                raise ConfigError("al.budget_per_update must be >= 1")
        m = self.model
        if any(int(h) != h or h < 1 for h in m.hidden_dims):
            raise ConfigError("model.hidden_dims must be positive integers")
        if not 0 <= m.dropout < 1:
            raise ConfigError("model.dropout must be in [0, 1)")
        if m.batch_size < 1 or m.max_epochs < 1 or m.patience < 1:
            raise ConfigError("model.batch_size, model.max_epochs and model.patience must be >= 1")
        if not m.learning_rate > 0:
            raise ConfigError("model.learning_rate must be positive")
        if len(self.de.aggressiveness) != 5:
            raise ConfigError("de.aggressiveness needs exactly five values")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["al"]["schedule"] = self.al.schedule.value
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        raw = dict(raw or {})
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

        def sub(key, klass, default=None):
            val = raw.get(key)
            if val is None:
                return default() if default else None
            if isinstance(val, klass):
                return val
            if not isinstance(val, dict):
                raise ConfigError(f"{key} must be a mapping")
            names = {f.name for f in fields(klass)}
            bad = set(val) - names
            if bad:
                raise ConfigError(f"unknown keys in {key}: {sorted(bad)}")
            try:
                return klass(**val)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None

        out = cls(**{k: v for k, v in raw.items() if k not in ("model", "morph", "al", "de", "synthetic")})
        out.model = sub("model", ModelConfig, ModelConfig)
        out.morph = sub("morph", MorphConfig, lambda: MorphConfig(tau_m=None))
        out.al = sub("al", ALConfig, ALConfig)
        out.de = sub("de", DEConfig, DEConfig)
        out.synthetic = sub("synthetic", SyntheticConfig)
        if out.synthetic_preset is not None and out.synthetic is None:
            out.synthetic = preset(out.synthetic_preset)
        return out


def preset(name: str) -> SyntheticConfig:
    try:
        return SyntheticConfig(**asdict(SYNTHETIC_PRESETS[name]))
    except KeyError:
        raise ConfigError(f"unknown synthetic preset {name!r}; choose from {sorted(SYNTHETIC_PRESETS)}") from None


def load_config_file(path) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return raw


# ----------------------------------------------------------------- pipeline


def build_stream(config: ExperimentConfig) -> DriftStream:
    """Raw (unstandardized) stream, family-limited when requested."""
    if config.synthetic is not None:
        stream = gen_synthetic(config.synthetic, derive_seed(config.seed, "synthetic"))
        stream.meta["stream_seed"] = stream.meta.pop("seed")
    else:
        stream = load_stream(config.data_path, config.data_format)
        stream.meta["source"] = str(config.data_path)
    if config.scenario == "family_limited":
        stream = limit_families(stream, config.top_k)
    return stream


def _dev_score(model: MLP, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    z = logits(model, x)
    f1 = compute_metrics(z.argmax(axis=1), y).f1
    loss = float(-log_softmax(z)[np.arange(len(y)), y].mean())
    return f1, -loss


def train_initial(stream: DriftStream, mc: ModelConfig, seed: int) -> tuple[MLP, int]:
    """Fit the starting model, early-stopping on dev F1 (dev loss breaks ties).

    Returns the best model and the number of epochs run.
    """
    model = init_model([stream.feature_dim, *mc.hidden_dims, 2], mc.dropout, derive_seed(seed, "init"))
    tb = TrainBatch(stream.train.features, stream.train.labels)
    dev = stream.dev if len(stream.dev) else stream.train
    state = AdamState.for_model(model, learning_rate=mc.learning_rate)
    best, best_key, wait = model.copy(), None, 0
    epoch = 0
    for epoch in range(1, mc.max_epochs + 1):
        res = train(model, tb, epochs=1, batch_size=mc.batch_size, seed=derive_seed(seed, "initial-epoch", epoch),
                    state=state, check_finite=True)
        model, state = res.model, res.state
        key = _dev_score(model, dev.features, dev.labels)
        if best_key is None or key > best_key:
            best, best_key, wait = model.copy(), key, 0
        else:
            wait += 1
            if wait >= mc.patience:
                break
    log.info("initial training stopped after %d epochs (dev f1=%.4f)", epoch, best_key[0])
    return best, epoch


@dataclass
class RunResult:
    scenario: str
    history: list[MetricsRecord]
    annotations: list[AnnotationEvent] = field(default_factory=list)
    confidence: list[ConfidenceRow] = field(default_factory=list)
    model: MLP | None = None
    ensemble: DEEnsemble | None = None
    stream_meta: dict = field(default_factory=dict)


def run_mlp_scenario(scenario: str, stream: DriftStream, initial: MLP, config: ExperimentConfig) -> RunResult:
    """Replay the (standardized) test months under an MLP-based scenario."""
    schedule = SCHEDULE_FOR[scenario]
    state = AdaptationState(initial.copy(), stream.train, batch_size=config.model.batch_size,
                            learning_rate=config.model.learning_rate)
    al = ALConfig(config.al.budget_per_update, schedule)
    morph = config.morph
    if not schedule.uses_morph:
        # only fine_tune_epochs matters for supervised-only schedules
        morph = MorphConfig(tau_m=0.6, fine_tune_epochs=config.morph.fine_tune_epochs)
    res = run_schedule(state, stream, al, morph, derive_seed(config.seed, "months"))
    confidence = [row for batch, probs in zip(stream.test_months, res.probs)
                  for row in confidence_rows(probs, batch.data.labels, batch.month)]
    return RunResult(scenario, res.history, res.annotations, confidence, state.model, None, dict(stream.meta))


def run_de_scenario(scenario: str, stream: DriftStream, config: ExperimentConfig) -> RunResult:
    ens = init_ensemble(stream.train, derive_seed(config.seed, "de"), config.de.aggressiveness, config.de.epochs,
                        update=scenario == "de_baseline", aging_threshold=config.de.aging_threshold)
    run = run_de(ens, stream.test_months)
    return RunResult(scenario, run.history, ensemble=run.ensemble, stream_meta=dict(stream.meta))


def prepare(config: ExperimentConfig) -> DriftStream:
    """Validated config -> standardized stream."""
    config.validate()
    stream, _ = standardize_stream(build_stream(config))
    return stream


def run(config: ExperimentConfig, stream: DriftStream | None = None, initial: MLP | None = None) -> RunResult:
    """Run one experiment end to end (artifacts are written separately).

    ``stream`` and ``initial`` let callers reuse a prepared stream and a
    trained starting model across scenarios sharing a root seed.
    """
    config.validate()
    if stream is None:
        stream = prepare(config)
    scenario = config.effective_scenario
    if scenario.startswith("de_baseline"):
        return run_de_scenario(scenario, stream, config)
    if initial is None:
        initial, _ = train_initial(stream, config.model, config.seed)
    return run_mlp_scenario(scenario, stream, initial, config)


def write_artifacts(result: RunResult, config: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(result.history, out / "metrics.csv")
    write_confidence_csv(result.confidence, out / "confidence.csv")
    with open(out / "annotations.ndjson", "w") as fh:
        for ev in result.annotations:
            fh.write(json.dumps(asdict(ev)) + "\n")
    echo = config.to_dict()
    echo["stream_meta"] = result.stream_meta
    with open(out / "config.json", "w") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if result.model is not None:
        save_model(out / "model.npz", result.model)
    if result.ensemble is not None:
        ens = result.ensemble
        np.savez(out / "ensemble.npz", weights=np.stack([m.weights for m in ens.models]),
                 biases=np.array([m.bias for m in ens.models]), C=np.array([m.C for m in ens.models]),
                 model_weights=ens.model_weights)
    return out
