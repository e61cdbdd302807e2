from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..datasets import LabeledDataset
from ..errors import SingleClassError, ValidationError
from ..spectra import GridSpec, SpectrumKind
from .base import TrainedModel, register
from .nn import softmax
from .prediction import Prediction


def hinge_loss(margin) -> np.ndarray:
    """``max(0, 1 - y f(x))`` given the signed margin ``y f(x)``."""
    return np.maximum(0.0, 1.0 - np.asarray(margin, dtype=float))


def fit_linear_svm(x: np.ndarray, y: np.ndarray, n_classes: int, epochs: int = 200,
                   lr: float = 0.1, reg: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """One-vs-rest linear SVMs by full-batch subgradient descent.

    Minimises ``reg/2 |w_c|^2 + mean(hinge(y_c (x w_c + b_c)))`` for every
    class ``c`` at once.  Returns ``(weights (d, C), bias (C,))``.
    """
    x = np.asarray(x, dtype=float)
    present = np.unique(y)
    if present.size < 2:
        raise SingleClassError("an SVM needs at least two classes")
    n, d = x.shape
    targets = -np.ones((n, n_classes))
    targets[np.arange(n), y] = 1.0
    w = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    for t in range(epochs):
        margins = targets * (x @ w + b)
        active = (margins < 1.0) * targets
        grad_w = reg * w - x.T @ active / n
        grad_b = -active.sum(axis=0) / n
        step = lr / np.sqrt(1.0 + t)
        w -= step * grad_w
        b -= step * grad_b
    return w, b


@register
@dataclass(frozen=True)
class LinearSvmModel(TrainedModel):
    """Scores are the softmax of the per-class decision values."""

    model_type = "linear_svm"

    weights: np.ndarray
    bias: np.ndarray
    classes: tuple
    grid: GridSpec | None = None
    kind: SpectrumKind | None = None

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x @ self.weights.astype(float) + self.bias.astype(float)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.decision_function(x))

    def state(self):
        return self._contract(), {"weights": self.weights, "bias": self.bias}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["weights"].astype(np.float32), arrays["bias"].astype(np.float32),
                   **cls._read_contract(meta))


def train_linear_svm_arrays(x: np.ndarray, y: np.ndarray, classes, epochs: int = 200,
                            lr: float = 0.1, reg: float = 1e-3,
                            grid: GridSpec | None = None,
                            kind: SpectrumKind | None = None) -> LinearSvmModel:
    if epochs < 1 or lr <= 0 or reg < 0:
        raise ValidationError("epochs and lr must be positive, reg nonnegative")
    w, b = fit_linear_svm(x, np.asarray(y, dtype=np.int64), len(classes), epochs, lr, reg)
    return LinearSvmModel(w.astype(np.float32), b.astype(np.float32), tuple(classes), grid, kind)


def train_linear_svm(train: LabeledDataset, epochs: int = 200, lr: float = 0.1,
                     reg: float = 1e-3) -> LinearSvmModel:
    return train_linear_svm_arrays(train.values, train.labels, train.species, epochs, lr, reg,
                                   train.grid, train.kind)


def predict_svm(model: LinearSvmModel, x) -> Prediction:
    return model.predict(x)
