from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..errors import ValidationError, ZeroVector

SUM_TOL = 1e-9


def l1_normalize(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    total = s.sum(axis=-1, keepdims=True)
    if np.any(total <= 0) or not np.all(np.isfinite(total)):
        raise ZeroVector("cannot L1-normalize a zero or non-finite score vector")
    return s / total


@dataclass(frozen=True)
class Prediction:
    """Nonnegative class scores summing to one, aligned with ``classes``."""

    scores: np.ndarray
    classes: tuple

    def __post_init__(self) -> None:
        s = np.array(self.scores, dtype=float)
        classes = tuple(self.classes)
        if s.ndim != 1 or s.size != len(classes):
            raise ValidationError(f"{s.size} scores for {len(classes)} classes")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise ValidationError("scores must be finite and nonnegative")
        if abs(s.sum() - 1.0) > SUM_TOL:
            raise ValidationError(f"scores sum to {s.sum()!r}, expected 1")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "classes", classes)

    @classmethod
    def from_scores(cls, raw, classes: Sequence) -> "Prediction":
        return cls(l1_normalize(np.clip(np.asarray(raw, dtype=float), 0.0, None)), tuple(classes))

    @classmethod
    def uniform(cls, classes: Sequence) -> "Prediction":
        n = len(classes)
        return cls(np.full(n, 1.0 / n), tuple(classes))

    @property
    def argmax(self) -> int:
        # np.argmax returns the first maximum: ties go to the lowest class id
        return int(np.argmax(self.scores))

    @property
    def label(self):
        return self.classes[self.argmax]

    def top(self, n: int = 5) -> list[tuple[object, float]]:
        order = np.argsort(-self.scores, kind="stable")[:n]
        return [(self.classes[i], float(self.scores[i])) for i in order]

    def to_dict(self, model: str | None = None, seed: int | None = None) -> dict:
        return {
            "classes": list(self.classes),
            "scores": [float(x) for x in self.scores],
            "model": model,
            "seed": seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Prediction":
        return cls(np.asarray(d["scores"], dtype=float), tuple(d["classes"]))


def predictions_from_matrix(proba: np.ndarray, classes: Sequence) -> list[Prediction]:
    return [Prediction(row, tuple(classes)) for row in proba]
