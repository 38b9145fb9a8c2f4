import json
import math

import numpy as np
import pytest

from compactgbm.boosting import (
    BoosterConfig,
    LogLoss,
    MSE,
    Model,
    compute_gradients,
    initial_score,
    predict,
    predict_proba,
    train,
)
from compactgbm.columnar import Dataset, Session
from compactgbm.errors import (
    ConfigError,
    DivergenceDetected,
    EmptyDataset,
    InvalidLabel,
    SchemaMismatch,
)
from compactgbm.persistence import dumps
from compactgbm.tree import Tree


def toy():
    return Dataset.from_arrays([np.array([1.0, 2, 3, 4])], np.array([0.0, 0, 1, 1]), ["x"])


TOY_CONFIG = BoosterConfig(num_trees=1, learning_rate=1.0, max_leaves=2, min_data_in_leaf=0)


def regression_data(seed=0, n=500, m=4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m))
    y = np.sin(X[:, 0]) + X[:, 1] ** 2 - 0.5 * X[:, 2] + 0.1 * rng.normal(size=n)
    return Dataset.from_arrays([np.ascontiguousarray(X[:, j]) for j in range(m)], y)


class TestGradients:
    def test_mse(self):
        g, h = compute_gradients("mse", [1.0], [0.0])
        assert (g[0], h[0]) == (-1.0, 1.0)
        g, h = compute_gradients("mse", [0.0, 1.0], [0.0, 1.0])
        assert g.tolist() == [0, 0] and h.tolist() == [1, 1]

    def test_logloss(self):
        g, h = compute_gradients("logloss", [1.0], [0.0])
        assert (g[0], h[0]) == (-0.5, 0.25)

    def test_invalid_label(self):
        with pytest.raises(InvalidLabel):
            compute_gradients("logloss", [2.0], [0.0])

    @pytest.mark.parametrize("obj", [MSE, LogLoss])
    def test_finite_differences(self, obj, rng):
        n = 1000
        y = rng.integers(0, 2, n).astype(float) if obj is LogLoss else rng.normal(scale=3, size=n)
        s = rng.uniform(-8, 8, size=n)
        step = 1e-5
        g, h = obj.gradients(y, s)
        fd_g = (obj.loss(y, s + step) - obj.loss(y, s - step)) / (2 * step)
        fd_h = (obj.gradients(y, s + step)[0] - obj.gradients(y, s - step)[0]) / (2 * step)
        np.testing.assert_allclose(fd_g, g, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(fd_h, h, rtol=1e-6, atol=1e-9)


class TestInitialScore:
    def test_mse_mean(self):
        assert initial_score("mse", [0, 0, 1, 1]) == 0.5

    def test_logloss(self):
        assert initial_score("logloss", [0, 1]) == 0.0
        rate = 1 - 1e-6
        assert initial_score("logloss", [1, 1]) == math.log(rate / (1 - rate))
        assert initial_score("logloss", [0, 0]) == math.log(1e-6 / (1 - 1e-6))

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            initial_score("mse", [])


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"num_trees": 0}, {"learning_rate": 0.0}, {"learning_rate": 1.5}, {"max_bins": 1},
        {"max_bins": 300}, {"objective": "huber"}, {"binning_mode": "mmap"},
        {"early_stopping_rounds": 0}, {"max_leaves": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            BoosterConfig(**kwargs).validate()

    def test_train_validates(self):
        with pytest.raises(ConfigError):
            train(BoosterConfig(num_trees=0), toy())


class TestTrain:
    def test_toy_trace(self):
        model = train(TOY_CONFIG, toy())
        assert model.base_score == 0.5
        tree = model.trees[0]
        assert tree.threshold[0] == 2.5
        assert predict(model, toy()).tolist() == [0.0, 0.0, 1.0, 1.0]
        assert model.train_loss == [0.5, 0.0]
        x2 = Dataset.from_arrays([np.array([2.0])], None, ["x"])
        assert predict(model, x2).tolist() == [0.0]

    def test_constant_labels(self):
        ds = Dataset.from_arrays([np.array([1.0, 5, 9])], np.array([3.0, 3, 3]), ["x"])
        model = train(BoosterConfig(num_trees=5, min_data_in_leaf=0), ds)
        assert predict(model, ds).tolist() == [3.0, 3.0, 3.0]
        assert model.train_loss[-1] == 0.0

    def test_monotone_training_loss(self):
        ds = regression_data(1)
        model = train(BoosterConfig(num_trees=60, learning_rate=1.0, min_split_gain=0.0), ds)
        assert all(b <= a for a, b in zip(model.train_loss, model.train_loss[1:]))

    def test_deterministic(self):
        ds = regression_data(2)
        cfg = BoosterConfig(num_trees=15, adaptive_bins=True, t_split=2)
        assert dumps(train(cfg, ds)) == dumps(train(cfg, ds))

    def test_prediction_additivity(self):
        ds = regression_data(3, n=300)
        model = train(BoosterConfig(num_trees=10), ds)
        cols = [c.values for c in ds.columns]
        for t in range(1, 11):
            diff = predict(model, ds, n_trees=t) - predict(model, ds, n_trees=t - 1)
            np.testing.assert_allclose(diff, model.learning_rate * model.trees[t - 1].predict(cols, ds.n_rows),
                                       rtol=0, atol=1e-12)

    def test_empty_model_predicts_base(self):
        model = Model(1.25, [], 0.1, "mse", ["x"])
        assert predict(model, toy()).tolist() == [1.25] * 4

    def test_logloss_probability(self):
        model = Model(0.0, [], 0.1, "logloss", ["x"])
        assert predict_proba(model, toy()).tolist() == [0.5] * 4

    def test_logloss_training_improves(self, rng):
        X = rng.normal(size=(400, 2))
        y = (X[:, 0] + 0.3 * rng.normal(size=400) > 0).astype(float)
        ds = Dataset.from_arrays([np.ascontiguousarray(X[:, j]) for j in range(2)], y)
        model = train(BoosterConfig(num_trees=30, objective="logloss"), ds)
        assert model.train_loss[-1] < 0.5 * model.train_loss[0]

    def test_logloss_rejects_bad_labels(self):
        ds = Dataset.from_arrays([np.array([1.0, 2.0])], np.array([0.0, 3.0]), ["x"])
        with pytest.raises(InvalidLabel):
            train(BoosterConfig(objective="logloss"), ds)

    def test_schema_mismatch_on_predict(self):
        model = train(TOY_CONFIG, toy())
        other = Dataset.from_arrays([np.array([1.0])], None, ["z"])
        with pytest.raises(SchemaMismatch):
            predict(model, other)

    def test_divergence(self):
        ds = Dataset.from_arrays([np.array([1.0, 2.0])], np.array([1e200, -1e200]), ["x"])
        with pytest.raises(DivergenceDetected):
            train(BoosterConfig(num_trees=1, min_data_in_leaf=0), ds)

    def test_early_stopping(self):
        ds = regression_data(4, n=400)
        rows = np.arange(400)
        model = train(BoosterConfig(num_trees=500, learning_rate=1.0, min_data_in_leaf=2,
                                    early_stopping_rounds=5),
                      ds, train_rows=rows[:200], valid_rows=rows[200:])
        assert len(model.valid_loss) < 501
        best = int(np.argmin(model.valid_loss))
        assert len(model.trees) == best
        assert len(model.valid_loss) - 1 - best == 5

    def test_callback_sees_every_iteration(self):
        seen = []
        train(BoosterConfig(num_trees=3), regression_data(5, n=100), callback=lambda *a: seen.append(a))
        assert [s[0] for s in seen] == [0, 1, 2, 3] and all(s[2] is None for s in seen)

    def test_adaptive_bins_resize_during_training(self):
        ds = regression_data(6)
        model = train(BoosterConfig(num_trees=40, max_bins=8, t_split=2, adaptive_bins=True), ds)
        assert max(model.metadata["n_bins"]) > 8
        assert all(n <= 256 for n in model.metadata["n_bins"])
        for b in model.bin_boundaries:
            assert np.all(np.diff(b) > 0)

    def test_session_accounting(self):
        ds = regression_data(7, n=300)
        for mode, cache in (("cache", 300 * 4), ("zerocopy", 0)):
            s = Session()
            train(BoosterConfig(num_trees=5, binning_mode=mode), ds, session=s)
            peak = s.report(peak=True)
            assert peak.raw_value_bytes_copied == 0
            assert peak.bin_cache_bytes == cache
            assert peak.gradient_bytes == 3 * 8 * 300
            assert s.report().total_library_bytes == 0

    def test_zero_copy_and_cache_models_agree(self):
        ds = regression_data(8, n=300)
        a = train(BoosterConfig(num_trees=10, adaptive_bins=True, t_split=1), ds)
        b = train(BoosterConfig(num_trees=10, adaptive_bins=True, t_split=1, binning_mode="zerocopy"), ds)
        assert json.loads(dumps(a))["trees"] == json.loads(dumps(b))["trees"]
