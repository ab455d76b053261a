"""scikit-learn style classifier around the layer cascade."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .config import DataConfig, RunConfig
from .network import build_cascade, forward
from .numerics import _sigmoid, _softmax
from .optim import train
from .validation import check_sequences


class PICClassifier(ClassifierMixin, BaseEstimator):
    """Sequence classifier built from a cascade of temporal layers.

    ``X`` has shape ``(n_samples, n_steps, n_channels)``. A 1-D ``y`` trains a
    single-label softmax classifier; a 2-D 0/1 indicator matrix trains a
    multi-label sigmoid classifier.

    Parameters mirror :class:`picnet.config.RunConfig`; ``learning_rate=None``
    takes the optimizer's default (0.1 for SGD, 0.01 for Adam).
    """

    def __init__(self, variant="pic", depth=4, window=9, stride=2, num_keys=32, num_values=32,
                 reduction=4, head_width=None, optimizer="sgd", learning_rate=None, momentum=0.9,
                 weight_decay=1e-5, epochs=100, batch_size=32, clip_norm=None, random_state=0):
        self.variant = variant
        self.depth = depth
        self.window = window
        self.stride = stride
        self.num_keys = num_keys
        self.num_values = num_values
        self.reduction = reduction
        self.head_width = head_width
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.random_state = random_state

    def _seed(self) -> int:
        if self.random_state is None or isinstance(self.random_state, (int, np.integer)):
            return int(self.random_state or 0)
        return int(check_random_state(self.random_state).randint(2**31 - 1))

    def _make_config(self, n_steps, n_channels, n_outputs, task) -> RunConfig:
        if task == "single_label":
            data = DataConfig(length=n_steps, num_classes=n_outputs)
        else:
            data = DataConfig(length=n_steps, num_actions=n_outputs)
        return RunConfig(
            seed=self._seed(), variant=self.variant, depth=self.depth, window=self.window,
            stride=self.stride, num_keys=self.num_keys, num_values=self.num_values,
            channels=n_channels, reduction=self.reduction, head_width=self.head_width, task=task,
            data=data, optimizer=self.optimizer, learning_rate=self.learning_rate,
            momentum=self.momentum, weight_decay=self.weight_decay, epochs=self.epochs,
            batch_size=self.batch_size, clip_norm=self.clip_norm,
        ).validate()

    def fit(self, X, y):
        X = check_sequences(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        if y.ndim == 1:
            self.classes_, targets = np.unique(y, return_inverse=True)
            task, n_out = "single_label", len(self.classes_)
        elif y.ndim == 2:
            targets = y.astype(np.float64)
            self.classes_ = np.arange(y.shape[1])
            task, n_out = "multi_label", y.shape[1]
        else:
            raise ValueError("y must be 1-D labels or a 2-D indicator matrix")
        self.config_ = self._make_config(X.shape[1], X.shape[2], n_out, task)
        self.model_ = build_cascade(self.config_)
        result = train(self.model_, X, targets, self.config_)
        self.history_ = result.history
        self.n_features_in_ = X.shape[2]
        self.n_steps_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_sequences(X, channels=self.n_features_in_)
        return forward(self.model_, X, "eval").data

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        if self.config_.task == "single_label":
            return _softmax(logits)
        return _sigmoid(logits)

    def predict(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        if self.config_.task == "single_label":
            return self.classes_[np.argmax(logits, axis=1)]
        return (logits > 0).astype(int)
