"""Scikit-learn style estimators wrapping the CNN training pipeline.

These follow the fit/predict/predict_proba contract with ``get_params`` /
``set_params`` from ``sklearn.base``, so the classifiers drop into
pipelines, grid search and ``clone``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .datasets import LabeledDataset, one_hot
from .distillation import (DistillationPlan, TrainingHyperparameters,
                           run_distillation_chain, train_hard)
from .network import ArchitectureSpec, logits, predict
from .validation import check_class_labels, check_images

_WIDTHS = {
    # (preset, channels) -> conv + dense widths
    ("paper", 1): ((32, 32, 64, 64), (200, 200)),
    ("paper", 3): ((64, 64, 128, 128), (256, 256)),
    ("desk", 1): ((8, 8, 16, 16), (64, 64)),
    ("desk", 3): ((8, 8, 16, 16), (64, 64)),
}


def _spec_for(X: np.ndarray, preset: str, n_classes: int) -> ArchitectureSpec:
    shape = tuple(X.shape[1:])
    key = (preset, shape[2])
    if key not in _WIDTHS:
        key = (preset, 1)
    conv, dense = _WIDTHS[key]
    return ArchitectureSpec(shape, conv, dense, n_classes, preset)


class TemperatureScaledCNN(ClassifierMixin, BaseEstimator):
    """Small CNN trained through a temperature-scaled softmax.

    Parameters mirror the training hyperparameters; ``temperature`` only
    affects training (and ``predict_proba`` when asked explicitly), never
    ``predict``, which always evaluates at temperature 1.
    """

    def __init__(self, preset: str = "desk", temperature: float = 1.0,
                 epochs: int = 10, batch_size: int = 128,
                 learning_rate: float = 0.01, momentum: float = 0.9,
                 decay: float = 1e-6, dropout: float = 0.5, seed: int = 0):
        self.preset = preset
        self.temperature = temperature
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.decay = decay
        self.dropout = dropout
        self.seed = seed

    def _hp(self) -> TrainingHyperparameters:
        return TrainingHyperparameters(
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            decay=self.decay, momentum=self.momentum, epochs=self.epochs,
            temperature=self.temperature, dropout=self.dropout, seed=self.seed)

    def fit(self, X, y):
        X = check_images(X)
        y = check_class_labels(y, len(X))
        self.classes_ = np.unique(y)
        n_classes = max(len(self.classes_), 2)
        codes = np.searchsorted(self.classes_, y)
        data = LabeledDataset(X, one_hot(codes, n_classes), "hard", "train")
        spec = _spec_for(X, self.preset, n_classes)
        self.model_ = train_hard(spec, data, self._hp())
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("fit this estimator before predicting")

    def predict(self, X):
        self._check_fitted()
        X = check_images(X, self.model_.spec.input_shape)
        idx = predict(self.model_, X, 1.0).argmax(axis=1)
        return self.classes_[np.minimum(idx, len(self.classes_) - 1)]

    def predict_proba(self, X, temperature: float = 1.0):
        self._check_fitted()
        X = check_images(X, self.model_.spec.input_shape)
        return predict(self.model_, X, temperature)[:, :len(self.classes_)]

    def decision_function(self, X):
        self._check_fitted()
        X = check_images(X, self.model_.spec.input_shape)
        return logits(self.model_, X)


class DistilledChainClassifier(ClassifierMixin, BaseEstimator):
    """Chain of models where each one learns the previous one's soft labels.

    ``fit`` trains the whole chain; prediction uses the final model. All
    trained steps stay available in ``models_``.
    """

    def __init__(self, chain_length: int = 3, preset: str = "desk",
                 temperature: float = 1.0, epochs: int = 10,
                 batch_size: int = 128, learning_rate: float = 0.01,
                 momentum: float = 0.9, decay: float = 1e-6,
                 dropout: float = 0.5, seed: int = 0):
        self.chain_length = chain_length
        self.preset = preset
        self.temperature = temperature
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.decay = decay
        self.dropout = dropout
        self.seed = seed

    def fit(self, X, y):
        X = check_images(X)
        y = check_class_labels(y, len(X))
        self.classes_ = np.unique(y)
        n_classes = max(len(self.classes_), 2)
        codes = np.searchsorted(self.classes_, y)
        data = LabeledDataset(X, one_hot(codes, n_classes), "hard", "train")
        hp = TrainingHyperparameters(
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            decay=self.decay, momentum=self.momentum, epochs=self.epochs,
            temperature=self.temperature, dropout=self.dropout, seed=self.seed)
        plan = DistillationPlan(_spec_for(X, self.preset, n_classes),
                                self.chain_length, hp)
        self.models_ = run_distillation_chain(plan, data)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict(self, X):
        if not hasattr(self, "models_"):
            raise NotFittedError("fit this estimator before predicting")
        X = check_images(X, self.models_[-1].spec.input_shape)
        idx = predict(self.models_[-1], X, 1.0).argmax(axis=1)
        return self.classes_[np.minimum(idx, len(self.classes_) - 1)]

    def predict_proba(self, X):
        if not hasattr(self, "models_"):
            raise NotFittedError("fit this estimator before predicting")
        X = check_images(X, self.models_[-1].spec.input_shape)
        return predict(self.models_[-1], X, 1.0)[:, :len(self.classes_)]
