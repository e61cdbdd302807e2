from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..datasets import LabeledDataset
from ..errors import ValidationError
from ..spectra import GridSpec, SpectrumKind
from .base import TrainedModel, register
from .prediction import Prediction


@register
@dataclass(frozen=True)
class KnnModel(TrainedModel):
    """Weighted nearest neighbours under cosine similarity.

    A class scores the summed similarity of its members among the ``k`` most
    similar training spectra.  Ties in similarity go to the lower training
    index.
    """

    model_type = "knn"

    reference: np.ndarray  # (n, d) float32
    labels: np.ndarray
    k: int
    classes: tuple
    grid: GridSpec | None = None
    kind: SpectrumKind | None = None

    def similarities(self, x: np.ndarray) -> np.ndarray:
        ref = self.reference.astype(float)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ref_norm = np.linalg.norm(ref, axis=1)
        x_norm = np.linalg.norm(x, axis=1)
        dots = x @ ref.T
        denom = np.outer(x_norm, ref_norm)
        with np.errstate(invalid="ignore", divide="ignore"):
            sims = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
        return sims

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        sims = self.similarities(x)
        n_classes = len(self.classes)
        k = min(self.k, sims.shape[1])
        out = np.zeros((sims.shape[0], n_classes))
        for row, s in enumerate(sims):
            top = np.argsort(-s, kind="stable")[:k]
            np.add.at(out[row], self.labels[top], np.clip(s[top], 0.0, None))
            total = out[row].sum()
            out[row] = out[row] / total if total > 0 else 1.0 / n_classes
        return out

    def state(self):
        return ({**self._contract(), "k": self.k},
                {"reference": self.reference, "labels": self.labels})

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["reference"].astype(np.float32), arrays["labels"].astype(np.int64),
                   int(meta["k"]), **cls._read_contract(meta))


def train_knn_weighted(train: LabeledDataset, k: int = 5) -> KnnModel:
    if k < 1:
        raise ValidationError("k must be >= 1")
    if len(train) == 0:
        raise ValidationError("training set is empty")
    return KnnModel(train.values.astype(np.float32), train.labels.copy(),
                    min(int(k), len(train)), train.species, train.grid, train.kind)


def predict_knn(model: KnnModel, spectrum) -> Prediction:
    return model.predict(spectrum)
