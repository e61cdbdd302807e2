"""Late fusion of two predictions over a shared class list."""

from __future__ import annotations

import warnings
from typing import Callable, Mapping, Sequence

import numpy as np

from .datasets import normalize_species
from .errors import ClassMismatch
from .learners.prediction import Prediction
from .learners.svm import LinearSvmModel, train_linear_svm_arrays


class DegenerateFusion(UserWarning):
    """The fused scores were identically zero; a uniform prediction was returned."""


def align(p: Prediction, q: Prediction) -> tuple[Prediction, Prediction]:
    """Restrict both predictions to their common classes (in ``p``'s order).

    Matching is by normalized species name; each side is renormalized.  A side
    with no mass left on the common classes becomes uniform.
    """
    if p.classes == q.classes:
        return p, q
    q_index = {normalize_species(c): i for i, c in enumerate(q.classes)}
    common = [(i, q_index[normalize_species(c)]) for i, c in enumerate(p.classes)
              if normalize_species(c) in q_index]
    if not common:
        raise ClassMismatch("predictions share no classes")
    classes = tuple(p.classes[i] for i, _ in common)

    def restrict(scores):
        s = np.asarray(scores, dtype=float)
        total = s.sum()
        return Prediction(s / total, classes) if total > 0 else Prediction.uniform(classes)

    return (restrict([p.scores[i] for i, _ in common]),
            restrict([q.scores[j] for _, j in common]))


def _finish(raw: np.ndarray, classes) -> Prediction:
    total = raw.sum()
    if not np.isfinite(total) or total <= 0:
        warnings.warn("fused prediction is identically zero; returning uniform",
                      DegenerateFusion, stacklevel=3)
        return Prediction.uniform(classes)
    return Prediction(raw / total, classes)


def fuse_average(p: Prediction, q: Prediction) -> Prediction:
    p, q = align(p, q)
    return _finish((p.scores + q.scores) / 2.0, p.classes)


def fuse_multiply(p: Prediction, q: Prediction) -> Prediction:
    p, q = align(p, q)
    return _finish(p.scores * q.scores, p.classes)


def fuse_square_multiply(libs_pred: Prediction, other_pred: Prediction) -> Prediction:
    """Square the LIBS-side scores, then multiply.  Not symmetric."""
    p, q = align(libs_pred, other_pred)
    return _finish(p.scores ** 2 * q.scores, p.classes)


FUSION_RULES: dict[str, Callable[[Prediction, Prediction], Prediction]] = {
    "ave": fuse_average,
    "mul": fuse_multiply,
    "sq": fuse_square_multiply,
}

SVM_DEFAULTS = {"epochs": 500, "lr": 0.5, "reg": 1e-4}


def fusion_features(p: Prediction, q: Prediction) -> np.ndarray:
    return np.concatenate([p.scores, q.scores])


def fuse_svm(train_pairs: Sequence[tuple[Prediction, Prediction, int]],
             cfg: Mapping | None = None) -> LinearSvmModel:
    """Train a linear SVM on concatenated ``[p | q]`` score vectors.

    The predictions must come from held-out folds (see ``heldout_predictions``)
    or the SVM learns the base classifiers' training-set overconfidence.
    """
    if not train_pairs:
        raise ValueError("no training pairs for the fusion SVM")
    opts = {**SVM_DEFAULTS, **(cfg or {})}
    aligned = [align(p, q) for p, q, _ in train_pairs]
    classes = aligned[0][0].classes
    if any(a.classes != classes for a, _ in aligned):
        raise ClassMismatch("fusion-SVM training predictions use different class lists")
    x = np.stack([fusion_features(a, b) for a, b in aligned])
    y = np.array([int(label) for _, _, label in train_pairs])
    return train_linear_svm_arrays(x, y, classes, int(opts["epochs"]), float(opts["lr"]),
                                   float(opts["reg"]))


def apply_fused_svm(model: LinearSvmModel, p: Prediction, q: Prediction) -> Prediction:
    p, q = align(p, q)
    if p.classes != model.classes:
        raise ClassMismatch("prediction classes differ from the fusion SVM's classes")
    return model.predict(fusion_features(p, q))


def heldout_predictions(x: np.ndarray, y: np.ndarray, fit_predict: Callable, folds: int = 3,
                        seed: int = 0) -> np.ndarray:
    """Out-of-fold score matrix: each row comes from a model that never saw it.

    ``fit_predict(train_idx, test_idx)`` must return a ``(len(test_idx), C)``
    score matrix.  Folds are stratified by label where possible.
    """
    rng = np.random.default_rng(seed)
    n = len(y)
    fold_of = np.empty(n, dtype=np.int64)
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        fold_of[idx] = (np.arange(idx.size) + int(rng.integers(folds))) % folds
    out = None
    for f in range(folds):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        if test.size == 0:
            continue
        scores = fit_predict(train, test)
        if out is None:
            out = np.zeros((n, scores.shape[1]))
        out[test] = scores
    return out
