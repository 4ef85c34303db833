import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphdrift.data import MonthBatch, SampleSet
from morphdrift.droid_evolver import (
    DEEnsemble,
    LinearModel,
    ensemble_predict,
    init_ensemble,
    pa_update,
    run_de,
    sign_label,
    to_signed,
    update_month,
)
from morphdrift.errors import ConfigError, InputError, SequencingError


class TestPA:
    def test_closed_form(self):
        m = pa_update(LinearModel(np.zeros(2)), np.array([1.0, 0.0]), +1)
        np.testing.assert_array_equal(m.weights, [0.5, 0.0])
        assert m.bias == 0.5

    def test_no_loss_no_change(self):
        m = LinearModel(np.array([2.0, 0.0]), 0.0)
        pa_update(m, np.array([1.0, 0.0]), +1)
        np.testing.assert_array_equal(m.weights, [2.0, 0.0])
        assert m.bias == 0.0

    def test_zero_vector(self):
        m = pa_update(LinearModel(np.zeros(3)), np.zeros(3), -1)
        np.testing.assert_array_equal(m.weights, 0.0)
        assert m.bias == -1.0

    def test_aggressiveness_caps_step(self):
        m = pa_update(LinearModel(np.zeros(2), C=0.1), np.array([1.0, 0.0]), +1)
        np.testing.assert_allclose(m.weights, [0.1, 0.0])
        assert m.bias == pytest.approx(0.1)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**31), y=st.sampled_from([-1, 1]), C=st.sampled_from([0.001, 0.1, 10.0, np.inf]))
    def test_margin_increases(self, seed, y, C):
        rng = np.random.default_rng(seed)
        m = LinearModel(rng.normal(size=4), float(rng.normal()), C)
        x = rng.normal(size=4)
        before = y * float(m.score(x))
        pa_update(m, x, y)
        after = y * float(m.score(x))
        if before < 1:
            assert after > before
            if C == np.inf:
                assert after == pytest.approx(1.0)
        else:
            assert after == before

    def test_rejects_bad_input(self):
        with pytest.raises(InputError):
            pa_update(LinearModel(np.zeros(2)), np.array([np.nan, 0.0]), 1)
        with pytest.raises(InputError):
            pa_update(LinearModel(np.zeros(2)), np.zeros(2), 0)


def signed_models(signs, dim=1):
    # model k scores sign(k) * x[0], so at x = (1,) its label is signs[k]
    return [LinearModel(np.array([float(s)] + [0.0] * (dim - 1)), 0.0) for s in signs]


def ens_of(signs, weights=None):
    w = np.full(len(signs), 1 / len(signs)) if weights is None else weights
    return DEEnsemble(signed_models(signs), w)


class TestEnsemblePredict:
    def test_unanimous(self):
        p = ensemble_predict(ens_of([1] * 5), [[1.0]])
        assert p.labels.tolist() == [1] and p.scores[0] == pytest.approx(1.0)

    def test_one_dissenter(self):
        p = ensemble_predict(ens_of([1, 1, -1, 1, 1]), [[1.0]])
        assert p.labels.tolist() == [1]
        assert p.scores[0] == pytest.approx(0.6)
        assert p.deviating[:, 0].tolist() == [False, False, True, False, False]

    def test_tie_is_benign(self):
        ens = ens_of([1, 1, -1, -1, 1], np.array([0.25, 0.25, 0.25, 0.25, 0.0]))
        p = ensemble_predict(ens, [[1.0]])
        assert p.scores[0] == 0 and p.labels.tolist() == [-1]

    def test_zero_score_member_is_benign(self):
        assert sign_label(0.0) == -1
        assert to_signed([0, 1]).tolist() == [-1, 1]

    def test_weights_validated(self):
        with pytest.raises(ConfigError):
            ens_of([1] * 5, np.array([0.5, 0.5, 0.5, 0.0, 0.0]))
        with pytest.raises(ConfigError):
            ens_of([1] * 5, np.array([1.2, -0.2, 0.0, 0.0, 0.0]))
        with pytest.raises(ConfigError):
            DEEnsemble(signed_models([1] * 5), np.full(5, 0.2), aging_threshold=0.0)


def two_blob(n, seed, dim=3, flip=False, month=1):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(scale=0.3, size=(n, dim))
    x[:, 0] += np.where(y == 1, 1.0, -1.0)
    labels = 1 - y if flip else y
    return SampleSet(x, labels, np.full(n, month))


def batch(data, month):
    return MonthBatch(month, SampleSet(data.features, data.labels, np.full(len(data), month)))


class TestUpdateMonth:
    def test_agreement_fixed_point(self):
        ens = ens_of([1] * 5)
        b = MonthBatch(1, SampleSet(np.array([[1.0], [2.0], [-1.0]]), [1, 1, 0], [1, 1, 1]))
        # all models share sign(x), so they never deviate
        new, rec = update_month(ens, b)
        for a, m in zip(new.models, ens.models):
            np.testing.assert_array_equal(a.weights, m.weights)
            assert a.bias == m.bias
        np.testing.assert_allclose(new.model_weights, 0.2)
        assert rec.pseudo_malware == rec.pseudo_benign == 0
        assert rec.f1 == 1.0

    def test_input_not_mutated(self):
        ens = ens_of([1, 1, -1, 1, 1])
        ref = ens.copy()
        update_month(ens, MonthBatch(1, SampleSet([[1.0]], [1], [1])))
        for a, b in zip(ens.models, ref.models):
            np.testing.assert_array_equal(a.weights, b.weights)
        assert ens.last_month is None

    def test_deviating_member_moves_toward_ensemble(self):
        ens = ens_of([1, 1, -1, 1, 1])
        new, rec = update_month(ens, MonthBatch(1, SampleSet([[1.0]], [1], [1])))
        assert float(new.models[2].score(np.array([1.0]))) > float(ens.models[2].score(np.array([1.0])))
        np.testing.assert_allclose(new.model_weights, np.array([1, 1, 0, 1, 1]) / 4)
        assert rec.pseudo_malware == 1 and rec.pseudo_benign == 0

    def test_metrics_before_update(self):
        ens = ens_of([-1, -1, -1, 1, 1])
        b = MonthBatch(1, SampleSet([[1.0], [1.0]], [1, 1], [1, 1]))
        _, rec = update_month(ens, b)
        # ensemble called both benign before any update
        assert (rec.tp, rec.fn) == (0, 2)

    def test_no_update_mode(self):
        train = two_blob(200, 0, month=0)
        ens = init_ensemble(train, 3, update=False)
        months = [batch(two_blob(50, m, flip=m % 2 == 0), m) for m in range(1, 6)]
        run = run_de(ens, months)
        for a, b in zip(run.ensemble.models, ens.models):
            np.testing.assert_array_equal(a.weights, b.weights)
            assert a.bias == b.bias
        np.testing.assert_array_equal(run.ensemble.model_weights, ens.model_weights)
        for mb, rec in zip(months, run.history):
            member = np.stack([sign_label(m.score(mb.features)) for m in ens.models])
            scores = ens.model_weights @ member
            np.testing.assert_array_equal(ensemble_predict(run.ensemble, mb.features).scores, scores)
            assert rec.pseudo_malware == 0

    def test_weights_stay_probability_vector(self):
        train = two_blob(200, 0, month=0)
        ens = init_ensemble(train, 3)
        for m in range(1, 6):
            ens, _ = update_month(ens, batch(two_blob(60, m, flip=m == 3), m))
            w = ens.model_weights
            assert (w >= 0).all() and abs(w.sum() - 1) < 1e-9

    def test_self_poisoning(self):
        train = two_blob(300, 1, month=0)
        y = to_signed(train.labels)
        right = [LinearModel(np.array([1.0, 0.0, 0.0]), 0.0, C) for C in (1.0, 10.0)]
        wrong = [LinearModel(np.array([-1.0, 0.0, 0.0]), 0.0, C) for C in (1.0, 10.0, 10.0)]
        ens = DEEnsemble(wrong + right, np.full(5, 0.2))
        month = batch(two_blob(200, 2), 1)
        pred = ensemble_predict(ens, month.features)
        assert np.mean(pred.labels != to_signed(month.data.labels)) > 0.9

        def member_acc(e):
            return np.mean([np.mean(sign_label(m.score(train.features)) == y) for m in e.models])

        new, _ = update_month(ens, month)
        assert member_acc(new) < member_acc(ens)
        # the formerly correct members are the ones that were poisoned
        for m in new.models[3:]:
            assert np.mean(sign_label(m.score(train.features)) == y) < 0.5

    @pytest.mark.parametrize("threshold,retrained", [(0.5, False), (0.75, True), (1.0, True)])
    def test_aging_threshold(self, threshold, retrained):
        models = [LinearModel(np.array([1.0, 0.0])) for _ in range(5)]
        models[2] = LinearModel(np.array([1.0, 1.0]))
        ens = DEEnsemble(models, np.full(5, 0.2), aging_threshold=threshold)
        # member 2 agrees on the first sample and deviates on the second: rate 0.5
        b = MonthBatch(1, SampleSet([[1.0, 0.0], [1.0, -2.0]], [1, 1], [1, 1]))
        new, _ = update_month(ens, b)
        assert (not np.array_equal(new.models[2].weights, ens.models[2].weights)) == retrained
        np.testing.assert_allclose(new.model_weights, np.array([1, 1, 0.5, 1, 1]) / 4.5)

    def test_sequencing(self):
        ens, _ = update_month(ens_of([1] * 5), MonthBatch(3, SampleSet([[1.0]], [1], [3])))
        with pytest.raises(SequencingError):
            update_month(ens, MonthBatch(3, SampleSet([[1.0]], [1], [3])))


class TestInit:
    def test_five_members_distinct(self):
        ens = init_ensemble(two_blob(100, 0, month=0), 1)
        assert len(ens.models) == 5
        assert [m.C for m in ens.models] == [0.001, 0.01, 0.1, 1.0, 10.0]
        np.testing.assert_allclose(ens.model_weights, 0.2)
        assert len({m.weights.tobytes() for m in ens.models}) == 5

    def test_learns_separable(self):
        train = two_blob(200, 0, month=0)
        ens = init_ensemble(train, 1)
        pred = ensemble_predict(ens, train.features)
        assert np.mean(pred.labels == to_signed(train.labels)) > 0.95

    def test_deterministic(self):
        a = init_ensemble(two_blob(100, 0, month=0), 4)
        b = init_ensemble(two_blob(100, 0, month=0), 4)
        for x, y in zip(a.models, b.models):
            np.testing.assert_array_equal(x.weights, y.weights)

    def test_errors(self):
        with pytest.raises(InputError):
            init_ensemble(SampleSet.empty(3), 0)
        with pytest.raises(ConfigError):
            init_ensemble(two_blob(10, 0), 0, aggressiveness=(1.0, 2.0))
