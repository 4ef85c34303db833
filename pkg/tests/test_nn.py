import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphdrift.errors import ConfigError, InputError, InvariantError, ShapeError
from morphdrift.gradcheck import max_relative_error, random_case
from morphdrift.nn import (
    MLP,
    AdamState,
    Gradients,
    TrainBatch,
    accuracy,
    adam_step,
    init_model,
    load_model,
    loss_and_grad,
    predict_proba,
    save_model,
    train,
)


def zero_model(dims):
    m = init_model(dims, 0.0, 0)
    for w in m.weights:
        w[:] = 0.0
    return m


def assert_models_equal(a: MLP, b: MLP, atol=0.0):
    for x, y in zip((*a.weights, *a.biases), (*b.weights, *b.biases)):
        if atol:
            np.testing.assert_allclose(x, y, atol=atol, rtol=0)
        else:
            np.testing.assert_array_equal(x, y)


class TestInit:
    def test_biases_zero(self):
        m = init_model([4, 3, 2], seed=7)
        assert all((b == 0).all() for b in m.biases)

    def test_deterministic(self):
        assert_models_equal(init_model([4, 3, 2], seed=7), init_model([4, 3, 2], seed=7))

    def test_shapes_and_range(self):
        m = init_model([5, 7, 3, 2], seed=1)
        assert [w.shape for w in m.weights] == [(7, 5), (3, 7), (2, 3)]
        assert [b.shape for b in m.biases] == [(7,), (3,), (2,)]
        for w, fan_in in zip(m.weights, [5, 7, 3]):
            assert np.abs(w).max() <= math.sqrt(6 / fan_in)

    @pytest.mark.parametrize("dims", [[4, 3, 3], [2], [4, 0, 2], [], [3, -1, 2]])
    def test_invalid_dims(self, dims):
        with pytest.raises(ConfigError):
            init_model(dims)

    def test_invalid_dropout(self):
        with pytest.raises(ConfigError):
            init_model([3, 2], dropout_rate=1.0)


class TestPredict:
    def test_zero_weights_uniform(self):
        p = predict_proba(zero_model([3, 4, 2]), np.random.default_rng(0).normal(size=(6, 3)))
        np.testing.assert_array_equal(p, 0.5)

    def test_closed_form_softmax(self):
        m = zero_model([1, 2])
        m.biases[0][:] = [1.0, 0.0]
        p = predict_proba(m, [[0.0]])
        e = math.e
        assert abs(p[0, 0] - e / (e + 1)) < 1e-15
        assert abs(p[0, 1] - 1 / (e + 1)) < 1e-15
        assert abs(p[0, 0] - 0.7310585786300049) < 1e-12

    def test_shift_invariance(self):
        m = init_model([3, 5, 2], 0.0, 3)
        x = np.random.default_rng(1).normal(size=(10, 3))
        before = predict_proba(m, x)
        m.biases[-1] += 123.456
        np.testing.assert_allclose(predict_proba(m, x), before, atol=1e-12, rtol=0)

    def test_large_logits_stay_finite(self):
        m = zero_model([1, 2])
        m.biases[0][:] = [1000.0, -1000.0]
        p = predict_proba(m, [[0.0]])
        assert np.isfinite(p).all() and abs(p.sum() - 1) < 1e-12

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            predict_proba(init_model([3, 2]), np.zeros((2, 4)))

    def test_non_finite_input(self):
        with pytest.raises(InputError):
            predict_proba(init_model([2, 2]), [[np.nan, 0.0]])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31), scale=st.floats(0.01, 50))
    def test_rows_are_distributions(self, seed, scale):
        rng = np.random.default_rng(seed)
        m = init_model([4, 6, 2], 0.0, seed)
        p = predict_proba(m, rng.normal(scale=scale, size=(8, 4)))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert ((p >= 0) & (p <= 1)).all()


class TestLossAndGrad:
    def test_uniform_prediction_loss(self):
        loss, _ = loss_and_grad(zero_model([3, 4, 2]), TrainBatch([[1.0, 2.0, 3.0]], [1]))
        assert abs(loss - math.log(2)) < 1e-12

    def test_zero_weight_batch(self):
        m = init_model([3, 4, 2], 0.0, 2)
        loss, g = loss_and_grad(m, TrainBatch(np.ones((4, 3)), [0, 1, 1, 0], weight=0.0))
        assert loss == 0
        assert all((x == 0).all() for x in (*g.weights, *g.biases))

    def test_gradient_shapes(self):
        m = init_model([5, 4, 3, 2], 0.3, 2)
        _, g = loss_and_grad(m, TrainBatch(np.ones((4, 5)), [0, 1, 1, 0]), 9)
        assert [x.shape for x in g.weights] == [w.shape for w in m.weights]
        assert [x.shape for x in g.biases] == [b.shape for b in m.biases]

    def test_finite_differences_small_model(self):
        rng = np.random.default_rng(5)
        m = init_model([3, 4, 2], 0.0, 11)
        batch = TrainBatch(rng.normal(size=(5, 3)), rng.integers(0, 2, 5))
        assert max_relative_error(m, batch, h=1e-5) < 1e-4

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_finite_differences_random(self, seed):
        model, batch = random_case(np.random.default_rng(seed))
        assert max_relative_error(model, batch) < 1e-4

    def test_weighted_loss_scales(self):
        m = init_model([3, 4, 2], 0.0, 2)
        x, y = np.random.default_rng(0).normal(size=(6, 3)), [0, 1, 0, 1, 1, 0]
        l1, g1 = loss_and_grad(m, TrainBatch(x, y, 1.0))
        l3, g3 = loss_and_grad(m, TrainBatch(x, y, 3.0))
        assert l3 == pytest.approx(3 * l1, rel=1e-12)
        np.testing.assert_allclose(g3.weights[0], 3 * g1.weights[0], rtol=1e-12)

    def test_dropout_deterministic_for_seed(self):
        m = init_model([3, 8, 2], 0.5, 2)
        b = TrainBatch(np.random.default_rng(0).normal(size=(6, 3)), [0, 1, 0, 1, 1, 0])
        la, ga = loss_and_grad(m, b, 42)
        lb, gb = loss_and_grad(m, b, 42)
        lc, _ = loss_and_grad(m, b, 43)
        assert la == lb and la != lc
        np.testing.assert_array_equal(ga.weights[0], gb.weights[0])

    def test_empty_batch(self):
        with pytest.raises(InputError):
            loss_and_grad(init_model([2, 2]), TrainBatch(np.zeros((0, 2)), []))

    def test_batch_validation(self):
        with pytest.raises(ShapeError):
            TrainBatch(np.zeros((3, 2)), [0, 1])
        with pytest.raises(InputError):
            TrainBatch([[np.inf, 0]], [0])
        with pytest.raises(InputError):
            TrainBatch([[0, 0]], [2])


class TestAdam:
    def test_first_step_closed_form(self):
        m = MLP([1, 2], [np.zeros((2, 1))], [np.zeros(2)], 0.0)
        state = AdamState.for_model(m)
        g = Gradients([np.ones((2, 1))], [np.zeros(2)])
        adam_step(m, state, g)
        assert abs(m.weights[0][0, 0] + 0.001) < 1e-9
        assert state.step_count == 1

    def test_zero_gradient_fixed_point(self):
        m = init_model([3, 4, 2], 0.0, 1)
        ref = m.copy()
        state = AdamState.for_model(m)
        for _ in range(20):
            adam_step(m, state, Gradients.zeros_like(m))
        assert_models_equal(m, ref, atol=1e-12)
        assert state.step_count == 20

    def test_shape_mismatch(self):
        m = init_model([3, 4, 2], 0.0, 1)
        other = init_model([3, 5, 2], 0.0, 1)
        with pytest.raises(ShapeError):
            adam_step(m, AdamState.for_model(m), Gradients.zeros_like(other))

    def test_state_mirrors_shapes(self):
        m = init_model([3, 4, 2], 0.0, 1)
        s = AdamState.for_model(m)
        assert [x.shape for x in s.m_w] == [w.shape for w in m.weights]
        assert [x.shape for x in s.v_b] == [b.shape for b in m.biases]

    def test_bad_hyperparameters(self):
        with pytest.raises(ConfigError):
            AdamState.for_model(init_model([2, 2]), learning_rate=0)
        with pytest.raises(ConfigError):
            AdamState.for_model(init_model([2, 2]), beta1=1.0)


def separable_toy(n=20, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(scale=0.3, size=(n, 2))
    x[:, 0] += np.where(y == 1, 1.5, -1.5)
    return x, y


class TestTrain:
    def test_separable_toy(self):
        x, y = separable_toy()
        m = init_model([2, 8, 2], 0.0, 0)
        res = train(m, TrainBatch(x, y), epochs=200, batch_size=4, seed=1, learning_rate=1e-2)
        assert accuracy(res.model, x, y) == 1.0
        assert res.losses[-1] < 0.1
        assert len(res.losses) == 200

    def test_input_model_untouched(self):
        x, y = separable_toy()
        m = init_model([2, 8, 2], 0.2, 0)
        ref = m.copy()
        train(m, TrainBatch(x, y), epochs=2, batch_size=4, seed=1)
        assert_models_equal(m, ref)

    def test_deterministic(self):
        x, y = separable_toy()
        m = init_model([2, 8, 2], 0.2, 0)
        a = train(m, TrainBatch(x, y), epochs=5, batch_size=3, seed=4)
        b = train(m, TrainBatch(x, y), epochs=5, batch_size=3, seed=4)
        assert a.losses == b.losses
        assert_models_equal(a.model, b.model)

    def test_pseudo_absent_matches_supervised(self):
        x, y = separable_toy()
        m = init_model([2, 8, 2], 0.2, 0)
        a = train(m, TrainBatch(x, y), None, epochs=3, batch_size=4, seed=9)
        b = train(m, TrainBatch(x, y), epochs=3, batch_size=4, seed=9)
        assert a.losses == b.losses

    def test_lambda_zero_matches_supervised(self):
        x, y = separable_toy()
        px, py = separable_toy(7, seed=3)
        m = init_model([2, 8, 2], 0.2, 0)
        sup = train(m, TrainBatch(x, y), epochs=4, batch_size=6, seed=9)
        mixed = train(m, TrainBatch(x, y), TrainBatch(px, py), epochs=4, batch_size=6, lambda_u=0.0, seed=9)
        assert_models_equal(sup.model, mixed.model, atol=1e-9)

    def test_pseudo_changes_result(self):
        x, y = separable_toy()
        px, py = separable_toy(7, seed=3)
        m = init_model([2, 8, 2], 0.0, 0)
        sup = train(m, TrainBatch(x, y), epochs=2, batch_size=6, seed=9)
        mixed = train(m, TrainBatch(x, y), TrainBatch(px, 1 - py), epochs=2, batch_size=6, lambda_u=1.0, seed=9)
        assert not np.array_equal(sup.model.weights[0], mixed.model.weights[0])

    @pytest.mark.parametrize("kw", [{"epochs": 0}, {"batch_size": 0}, {"lambda_u": -1.0}])
    def test_bad_config(self, kw):
        x, y = separable_toy()
        with pytest.raises(ConfigError):
            train(init_model([2, 2]), TrainBatch(x, y), **kw)

    def test_empty_sets(self):
        x, y = separable_toy()
        with pytest.raises(InputError):
            train(init_model([2, 2]), TrainBatch(np.zeros((0, 2)), []))
        with pytest.raises(InputError):
            train(init_model([2, 2]), TrainBatch(x, y), TrainBatch(np.zeros((0, 2)), []))

    def test_non_finite_detected(self):
        x = np.random.default_rng(0).normal(size=(20, 2)) * 1e200
        y = np.arange(20) % 2
        m = init_model([2, 4, 2], 0.0, 0)
        with np.errstate(all="ignore"), pytest.raises(InvariantError):
            train(m, TrainBatch(x, y), epochs=1, batch_size=4, learning_rate=1e300, check_finite=True)


def test_checkpoint_round_trip(tmp_path):
    m = init_model([5, 7, 3, 2], 0.25, 3)
    save_model(tmp_path / "m.npz", m)
    back = load_model(tmp_path / "m.npz")
    assert back.layer_dims == m.layer_dims and back.dropout_rate == m.dropout_rate
    assert_models_equal(back, m)
