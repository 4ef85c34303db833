"""Dense ReLU network with softmax output, written directly against numpy.

Weights for layer ``k`` have shape ``(layer_dims[k+1], layer_dims[k])`` so a
forward step is ``h @ W.T + b``. The last layer always has two logits
(0 = benign, 1 = malware).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from morphdrift.errors import ConfigError, InputError, InvariantError, ShapeError
from morphdrift.seeding import derive_seed

CHECKPOINT_VERSION = 1


@dataclass
class MLP:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_rate: float = 0.2

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> MLP:
        return MLP(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.dropout_rate,
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in (*self.weights, *self.biases))

    def n_params(self) -> int:
        return sum(p.size for p in (*self.weights, *self.biases))


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: MLP) -> Gradients:
        return cls([np.zeros_like(w) for w in model.weights], [np.zeros_like(b) for b in model.biases])

    def __add__(self, other: Gradients) -> Gradients:
        return Gradients(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )


@dataclass
class TrainBatch:
    inputs: np.ndarray
    targets: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ShapeError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeError(
                f"{self.inputs.shape[0]} input rows but {self.targets.shape[0]} targets"
            )
        if not np.isfinite(self.inputs).all():
            raise InputError("inputs contain non-finite values")
        if self.targets.size and not np.isin(self.targets, (0, 1)).all():
            raise InputError("targets must be 0 or 1")

    def __len__(self) -> int:
        return self.targets.shape[0]

    def take(self, idx: np.ndarray) -> TrainBatch:
        return TrainBatch(self.inputs[idx], self.targets[idx], self.weight)


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_w: list[np.ndarray]
    v_b: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_model(cls, model: MLP, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8) -> AdamState:
        for name, v in (("learning_rate", learning_rate), ("beta1", beta1), ("beta2", beta2), ("epsilon", epsilon)):
            if not v > 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        if beta1 >= 1 or beta2 >= 1:
            raise ConfigError("Adam betas must be < 1")
        z = Gradients.zeros_like(model)
        z2 = Gradients.zeros_like(model)
        return cls(z.weights, z.biases, z2.weights, z2.biases, 0, learning_rate, beta1, beta2, epsilon)


def validate_layer_dims(layer_dims) -> list[int]:
    dims = list(layer_dims)
    if len(dims) < 2:
        raise ConfigError(f"layer_dims needs at least 2 entries, got {dims}")
    if any(int(d) != d or d < 1 for d in dims):
        raise ConfigError(f"layer_dims must be positive integers, got {dims}")
    if dims[-1] != 2:
        raise ConfigError(f"last layer must have exactly 2 outputs, got {dims[-1]}")
    return [int(d) for d in dims]


def init_model(layer_dims, dropout_rate: float = 0.2, seed: int = 0) -> MLP:
    """Fan-in scaled uniform weights in +-sqrt(6 / fan_in), zero biases."""
    dims = validate_layer_dims(layer_dims)
    if not 0 <= dropout_rate < 1:
        raise ConfigError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLP(dims, weights, biases, float(dropout_rate))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_inputs(model: MLP, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"expected inputs with {model.input_dim} columns, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise InputError("inputs contain non-finite values")
    return x


def logits(model: MLP, inputs) -> np.ndarray:
    h = _check_inputs(model, inputs)
    last = model.n_layers - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.T + b
        if k < last:
            np.maximum(h, 0.0, out=h)
    return h


def predict_proba(model: MLP, inputs) -> np.ndarray:
    """Inference-mode class probabilities, one softmax row per input row."""
    return softmax(logits(model, inputs))


def loss_and_grad(model: MLP, batch: TrainBatch, dropout_mask_seed: int = 0) -> tuple[float, Gradients]:
    """Weighted mean cross-entropy of ``batch`` and its gradient.

    Dropout (inverted, rate ``model.dropout_rate``) is applied after each
    hidden ReLU with masks drawn from ``dropout_mask_seed``.
    """
    n = len(batch)
    if n == 0:
        raise InputError("cannot compute loss of an empty batch")
    x = _check_inputs(model, batch.inputs)
    p_drop = model.dropout_rate
    rng = np.random.default_rng(dropout_mask_seed) if p_drop > 0 else None

    acts = [x]
    masks: list[np.ndarray | None] = []
    h = x
    last = model.n_layers - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.T + b
        if k < last:
            h = np.maximum(h, 0.0)
            if rng is not None:
                mask = (rng.random(h.shape) >= p_drop) / (1.0 - p_drop)
                h = h * mask
            else:
                mask = None
            masks.append(mask)
            acts.append(h)

    logp = log_softmax(h)
    t = batch.targets
    loss = -logp[np.arange(n), t].mean() * batch.weight

    delta = np.exp(logp)
    delta[np.arange(n), t] -= 1.0
    delta *= batch.weight / n

    gw: list[np.ndarray] = [None] * model.n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * model.n_layers  # type: ignore[list-item]
    for k in range(last, -1, -1):
        gw[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ model.weights[k]
            mask = masks[k - 1]
            if mask is not None:
                delta = delta * mask
            # acts[k] > 0 exactly where the ReLU (and mask) passed gradient
            delta = delta * (acts[k] > 0)
    return float(loss), Gradients(gw, gb)


def adam_step(model: MLP, state: AdamState, grads: Gradients) -> tuple[MLP, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    if len(grads.weights) != model.n_layers or any(
        g.shape != p.shape for g, p in zip((*grads.weights, *grads.biases), (*model.weights, *model.biases))
    ):
        raise ShapeError("gradient shapes do not match model parameters")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for params, grad_list, m_list, v_list in (
        (model.weights, grads.weights, state.m_w, state.v_w),
        (model.biases, grads.biases, state.m_b, state.v_b),
    ):
        for p, g, m, v in zip(params, grad_list, m_list, v_list):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return model, state


@dataclass
class TrainResult:
    model: MLP
    losses: list[float] = field(default_factory=list)
    state: AdamState | None = None


def train(
    model: MLP,
    labeled: TrainBatch,
    pseudo: TrainBatch | None = None,
    epochs: int = 10,
    batch_size: int = 64,
    lambda_u: float = 1.0,
    seed: int = 0,
    learning_rate: float = 1e-3,
    state: AdamState | None = None,
    check_finite: bool = False,
) -> TrainResult:
    """Minibatch Adam on ``labeled``, optionally paired with pseudo-labels.

    An epoch is one shuffled pass over ``labeled``. When ``pseudo`` is given,
    every step also draws an equal-sized minibatch from the pseudo pool
    (reshuffled and cycled as needed) and the step minimises
    ``L_labeled + lambda_u * L_pseudo``. The input model is not modified.
    """
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if len(labeled) == 0:
        raise InputError("labeled training set is empty")
    if pseudo is not None and len(pseudo) == 0:
        raise InputError("pseudo-labeled set is empty; pass None instead")
    if lambda_u < 0:
        raise ConfigError(f"lambda_u must be >= 0, got {lambda_u}")

    model = model.copy()
    if state is None:
        state = AdamState.for_model(model, learning_rate=learning_rate)
    shuffle_rng = np.random.default_rng(derive_seed(seed, "shuffle"))
    pseudo_rng = np.random.default_rng(derive_seed(seed, "pseudo-shuffle"))
    labeled_w = TrainBatch(labeled.inputs, labeled.targets, 1.0)
    if pseudo is not None:
        pseudo_w = TrainBatch(pseudo.inputs, pseudo.targets, lambda_u)
        pseudo_order = pseudo_rng.permutation(len(pseudo))
        pseudo_pos = 0

    n = len(labeled)
    losses = []
    step = 0
    for _ in range(epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, grads = loss_and_grad(model, labeled_w.take(idx), derive_seed(seed, "dropout", step, 0))
            if pseudo is not None:
                take = []
                while len(take) < len(idx):
                    if pseudo_pos == len(pseudo_order):
                        pseudo_order = pseudo_rng.permutation(len(pseudo))
                        pseudo_pos = 0
                    chunk = pseudo_order[pseudo_pos : pseudo_pos + len(idx) - len(take)]
                    pseudo_pos += len(chunk)
                    take.extend(chunk.tolist())
                u_loss, u_grads = loss_and_grad(
                    model, pseudo_w.take(np.asarray(take)), derive_seed(seed, "dropout", step, 1)
                )
                loss += u_loss
                grads = grads + u_grads
            adam_step(model, state, grads)
            if check_finite and not model.is_finite():
                raise InvariantError(f"non-finite parameters after optimizer step {state.step_count}")
            epoch_loss += loss
            n_batches += 1
            step += 1
        losses.append(epoch_loss / n_batches)
    return TrainResult(model, losses, state)


def accuracy(model: MLP, inputs, targets) -> float:
    return float((predict_proba(model, inputs).argmax(axis=1) == np.asarray(targets)).mean())


def save_model(path, model: MLP) -> None:
    arrays = {"format_version": np.array(CHECKPOINT_VERSION), "layer_dims": np.array(model.layer_dims),
              "dropout_rate": np.array(model.dropout_rate)}
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{k}"] = w
        arrays[f"b{k}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> MLP:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise InputError(f"unsupported checkpoint version {version}")
        dims = [int(d) for d in data["layer_dims"]]
        n = len(dims) - 1
        return MLP(
            validate_layer_dims(dims),
            [data[f"w{k}"].copy() for k in range(n)],
            [data[f"b{k}"].copy() for k in range(n)],
            float(data["dropout_rate"]),
        )
