"""scikit-learn style wrappers around the CNN and LSTM networks."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..validation import check_binary_labels, check_feature_tensor
from .model import Model, ModelSpec
from .serialize import load_model, save_model
from .train import TrainConfig, train


class _NetworkClassifier(ClassifierMixin, BaseEstimator):
    kind = None

    def _spec(self, input_shape) -> ModelSpec:
        raise NotImplementedError

    def fit(self, X, y):
        X = check_feature_tensor(X)
        y = check_binary_labels(y, len(X))
        config = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            rng_seed=self.random_state, validation_fraction=self.validation_fraction,
        )
        self.model_, self.history_ = train(self._spec(X.shape[1:]), X, y, config)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_feature_tensor(X, self.model_.spec.input_shape)
        out = np.empty((len(X), 2))
        for i in range(0, len(X), 256):
            out[i:i + 256] = self.model_.predict_proba(X[i:i + 256])
        return out

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "model_")
        return save_model(self.model_)

    @classmethod
    def from_model(cls, model: Model) -> "_NetworkClassifier":
        est = cls()
        est.model_ = model
        est.history_ = []
        est.classes_ = np.array([0, 1])
        h, w = model.spec.input_shape
        est.n_features_in_ = h * w
        return est

    @classmethod
    def from_bytes(cls, data: bytes) -> "_NetworkClassifier":
        model = load_model(data)
        if model.spec.kind != cls.kind:
            raise ValueError(f"model file holds a {model.spec.kind} network, not {cls.kind}")
        return cls.from_model(model)


class CNNClassifier(_NetworkClassifier):
    """Four 3x3 conv layers (16-32-64-128, ReLU, same padding), a 2x2 max-pool
    and dense 128-64-2 with softmax, trained with Adam on cross-entropy."""

    kind = "cnn"

    def __init__(self, epochs=100, batch_size=32, learning_rate=1e-3, random_state=0,
                 validation_fraction=0.0, conv_filters=(16, 32, 64, 128), dense_units=(128, 64)):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.validation_fraction = validation_fraction
        self.conv_filters = conv_filters
        self.dense_units = dense_units

    def _spec(self, input_shape):
        return ModelSpec.cnn(tuple(input_shape), conv_filters=self.conv_filters,
                             dense_units=self.dense_units)


class LSTMClassifier(_NetworkClassifier):
    """Two 128-unit LSTM layers, time-distributed dense 64-32-16-8 (ReLU) and a
    2-way softmax reading the last timestep (or the flattened sequence)."""

    kind = "lstm"

    def __init__(self, epochs=100, batch_size=32, learning_rate=1e-3, random_state=0,
                 validation_fraction=0.0, lstm_units=(128, 128), td_units=(64, 32, 16, 8),
                 readout="last"):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.validation_fraction = validation_fraction
        self.lstm_units = lstm_units
        self.td_units = td_units
        self.readout = readout

    def _spec(self, input_shape):
        return ModelSpec.lstm(tuple(input_shape), lstm_units=self.lstm_units,
                              td_units=self.td_units, readout=self.readout)


def make_classifier(kind: str, **params) -> _NetworkClassifier:
    classes = {"cnn": CNNClassifier, "lstm": LSTMClassifier}
    if kind not in classes:
        raise ValueError(f"unknown model kind {kind!r}")
    return classes[kind](**params)
