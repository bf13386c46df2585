import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ddta.datasets import synthetic_digits
from ddta.estimators import DistilledChainClassifier, TemperatureScaledCNN


@pytest.fixture(scope="module")
def digits28():
    train, test = synthetic_digits(600, 100, seed=17)
    return (train.images, train.class_indices,
            test.images, test.class_indices)


@pytest.fixture(scope="module")
def fitted(digits28):
    X, y, _, _ = digits28
    est = TemperatureScaledCNN(epochs=8, seed=1, learning_rate=0.05, dropout=0.2)
    return est.fit(X, y)


class TestTemperatureScaledCNN:
    def test_params_round_trip_and_clone(self):
        est = TemperatureScaledCNN(temperature=10.0, epochs=3, seed=7)
        params = est.get_params()
        assert params["temperature"] == 10.0 and params["epochs"] == 3
        est2 = clone(est)
        assert est2.get_params() == params
        est.set_params(epochs=5)
        assert est.epochs == 5

    def test_predict_before_fit_raises(self, digits28):
        X, _, _, _ = digits28
        with pytest.raises(NotFittedError):
            TemperatureScaledCNN().predict(X)

    def test_fit_predict_shapes(self, fitted, digits28):
        _, _, Xt, yt = digits28
        preds = fitted.predict(Xt)
        assert preds.shape == yt.shape
        assert set(np.unique(preds)) <= set(range(10))
        assert fitted.score(Xt, yt) > 0.5

    def test_predict_proba_rows(self, fitted, digits28):
        _, _, Xt, _ = digits28
        proba = fitted.predict_proba(Xt[:10])
        assert proba.shape == (10, 10)
        assert np.abs(proba.sum(axis=1) - 1.0).max() < 1e-5
        flat = fitted.predict_proba(Xt[:10], temperature=40.0)
        assert flat.std() < proba.std()

    def test_decision_function_is_presoftmax(self, fitted, digits28):
        _, _, Xt, _ = digits28
        z = fitted.decision_function(Xt[:5])
        assert z.shape == (5, 10)
        assert np.array_equal(z.argmax(1), fitted.predict_proba(Xt[:5]).argmax(1))

    def test_label_subset_mapping(self, digits28):
        X, y, _, _ = digits28
        keep = np.isin(y, [2, 5, 9])
        est = TemperatureScaledCNN(epochs=1, seed=0).fit(X[keep], y[keep])
        assert list(est.classes_) == [2, 5, 9]
        assert set(np.unique(est.predict(X[keep]))) <= {2, 5, 9}

    def test_input_validation(self, digits28):
        X, y, _, _ = digits28
        with pytest.raises(ValueError, match=r"\(n, H, W, C\)"):
            TemperatureScaledCNN().fit(X.reshape(len(X), -1), y)
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            TemperatureScaledCNN().fit(X + 2.0, y)
        with pytest.raises(ValueError, match="labels"):
            TemperatureScaledCNN().fit(X, y[:-5])

    def test_fitted_shape_enforced(self, fitted):
        with pytest.raises(ValueError, match="per-sample shape"):
            fitted.predict(np.zeros((2, 16, 16, 1), dtype=np.float32))


class TestDistilledChainClassifier:
    def test_chain_fit_predict(self, digits28):
        X, y, Xt, yt = digits28
        est = DistilledChainClassifier(chain_length=2, epochs=1, seed=3,
                                       temperature=5.0)
        est.fit(X, y)
        assert len(est.models_) == 2
        assert [m.provenance for m in est.models_] == ["teacher", "student"]
        assert est.models_[-1].temperature == 5.0
        preds = est.predict(Xt)
        assert preds.shape == yt.shape
        proba = est.predict_proba(Xt[:4])
        assert np.abs(proba.sum(1) - 1.0).max() < 1e-5

    def test_not_fitted(self, digits28):
        X, _, _, _ = digits28
        with pytest.raises(NotFittedError):
            DistilledChainClassifier().predict(X)

    def test_clone_compatible(self):
        est = DistilledChainClassifier(chain_length=4, temperature=20.0)
        est2 = clone(est)
        assert est2.get_params()["chain_length"] == 4
