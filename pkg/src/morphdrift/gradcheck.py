"""Central finite-difference check of the analytic MLP gradients."""

from __future__ import annotations

import numpy as np

from morphdrift.nn import MLP, TrainBatch, init_model, loss_and_grad


def _plain_loss(model: MLP, batch: TrainBatch) -> float:
    # forward-only cross-entropy, independent of the backprop code path
    h = batch.inputs
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.T + b
        if k < model.n_layers - 1:
            h = np.where(h > 0, h, 0.0)
    m = h.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(h - m).sum(axis=1))
    return float(np.mean(lse - h[np.arange(len(batch)), batch.targets]) * batch.weight)


def numeric_gradients(model: MLP, batch: TrainBatch, h: float = 1e-5) -> list[np.ndarray]:
    """Finite-difference gradients ordered [w0, b0, w1, b1, ...]."""
    out = []
    for k in range(model.n_layers):
        for param in (model.weights[k], model.biases[k]):
            g = np.zeros_like(param)
            it = np.nditer(param, flags=["multi_index"])
            for _ in it:
                i = it.multi_index
                orig = param[i]
                param[i] = orig + h
                up = _plain_loss(model, batch)
                param[i] = orig - h
                down = _plain_loss(model, batch)
                param[i] = orig
                g[i] = (up - down) / (2 * h)
            out.append(g)
    return out


def max_relative_error(model: MLP, batch: TrainBatch, h: float = 1e-5) -> float:
    zero_drop = MLP(model.layer_dims, model.weights, model.biases, 0.0)
    _, grads = loss_and_grad(zero_drop, batch, 0)
    analytic = [g for k in range(model.n_layers) for g in (grads.weights[k], grads.biases[k])]
    numeric = numeric_gradients(zero_drop, batch, h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        # relative error with an absolute floor so near-zero components do not blow up
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = max(worst, float(err.max(initial=0.0)))
    return worst


def random_case(rng: np.random.Generator, max_in: int = 8, max_hidden: int = 8, max_batch: int = 8):
    dims = [int(rng.integers(1, max_in + 1)), int(rng.integers(1, max_hidden + 1)), 2]
    model = init_model(dims, 0.0, int(rng.integers(2**31)))
    for b in model.biases:
        b[:] = rng.normal(0, 0.5, b.shape)
    n = int(rng.integers(1, max_batch + 1))
    batch = TrainBatch(rng.normal(size=(n, dims[0])), rng.integers(0, 2, n))
    return model, batch


def check_random_models(n_models: int = 20, seed: int = 0, h: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    return max(max_relative_error(*random_case(rng), h=h) for _ in range(n_models))
