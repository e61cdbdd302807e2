"""Extremely randomized trees (Geurts et al.) for spectra.

Each node draws ``k_features`` non-constant features, one uniform threshold
per feature within the node's range, and keeps the candidate with the largest
Gini decrease.  Trees see the whole training set (no bootstrap).  Leaves hold
class distributions; the forest averages them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..datasets import LabeledDataset
from ..errors import ValidationError
from ..spectra import GridSpec, SpectrumKind
from .base import TrainedModel, register
from .prediction import Prediction


def gini(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    total = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / total[..., None]
        g = 1.0 - np.sum(p * p, axis=-1)
    return np.where(total > 0, g, 0.0)


@dataclass
class _TreeArrays:
    feature: list
    threshold: list
    left: list
    right: list
    value: list

    def add(self, feature=-1, threshold=0.0, value=None) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1


def _grow_tree(x: np.ndarray, y: np.ndarray, n_classes: int, k_features: int,
               min_split: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    t = _TreeArrays([], [], [], [], [])
    root = t.add()
    stack = [(root, np.arange(y.size))]
    while stack:
        node, idx = stack.pop()
        counts = np.bincount(y[idx], minlength=n_classes).astype(float)
        t.value[node] = counts / counts.sum()
        if idx.size < min_split or np.count_nonzero(counts) <= 1:
            continue
        xs = x[idx]
        lo = xs.min(axis=0)
        hi = xs.max(axis=0)
        candidates = np.flatnonzero(hi > lo)
        if candidates.size == 0:
            continue
        drawn = rng.choice(candidates, size=min(k_features, candidates.size), replace=False)
        thresholds = rng.uniform(lo[drawn], hi[drawn]).astype(np.float32)
        # keep each split non-trivial after float32 rounding
        thresholds = np.minimum(thresholds, np.nextafter(hi[drawn], lo[drawn]).astype(np.float32))
        thresholds = np.maximum(thresholds, lo[drawn])
        go_left = xs[:, drawn] <= thresholds  # (n_node, k)
        onehot = np.eye(n_classes)[y[idx]]
        left_counts = go_left.T.astype(float) @ onehot
        right_counts = counts[None, :] - left_counts
        n_left = left_counts.sum(axis=1)
        n_right = right_counts.sum(axis=1)
        valid = (n_left > 0) & (n_right > 0)
        if not valid.any():
            continue
        gain = gini(counts) - (n_left * gini(left_counts) + n_right * gini(right_counts)) / idx.size
        gain = np.where(valid, gain, -np.inf)
        best = int(np.argmax(gain))
        t.feature[node] = int(drawn[best])
        t.threshold[node] = float(thresholds[best])
        mask = go_left[:, best]
        left = t.add()
        right = t.add()
        t.left[node], t.right[node] = left, right
        stack.append((right, idx[~mask]))
        stack.append((left, idx[mask]))
    return {
        "feature": np.array(t.feature, dtype=np.int64),
        "threshold": np.array(t.threshold, dtype=np.float32),
        "left": np.array(t.left, dtype=np.int64),
        "right": np.array(t.right, dtype=np.int64),
        "value": np.array(t.value, dtype=np.float32),
    }


def _tree_proba(tree: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    node = np.zeros(x.shape[0], dtype=np.int64)
    rows = np.arange(x.shape[0])
    while True:
        feat = tree["feature"][node]
        active = feat >= 0
        if not active.any():
            break
        a = rows[active]
        n = node[active]
        go_left = x[a, feat[active]] <= tree["threshold"][n]
        node[a] = np.where(go_left, tree["left"][n], tree["right"][n])
    return tree["value"][node].astype(float)


@register
@dataclass(frozen=True)
class ExtraTreesModel(TrainedModel):
    model_type = "extra_trees"

    trees: tuple
    classes: tuple
    grid: GridSpec | None = None
    kind: SpectrumKind | None = None

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x)).astype(np.float32)
        total = np.zeros((x.shape[0], len(self.classes)))
        for tree in self.trees:
            total += _tree_proba(tree, x)
        total /= len(self.trees)
        return total / total.sum(axis=1, keepdims=True)

    def state(self):
        arrays = {}
        for i, tree in enumerate(self.trees):
            for key, arr in tree.items():
                arrays[f"tree{i}.{key}"] = arr
        return {**self._contract(), "n_trees": len(self.trees)}, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        trees = []
        for i in range(int(meta["n_trees"])):
            trees.append({
                "feature": arrays[f"tree{i}.feature"].astype(np.int64),
                "threshold": arrays[f"tree{i}.threshold"].astype(np.float32),
                "left": arrays[f"tree{i}.left"].astype(np.int64),
                "right": arrays[f"tree{i}.right"].astype(np.int64),
                "value": arrays[f"tree{i}.value"].astype(np.float32),
            })
        return cls(tuple(trees), **cls._read_contract(meta))


def train_extra_trees(train: LabeledDataset, n_trees: int = 100, k_features: int | None = None,
                      min_split: int = 2, seed: int = 0) -> ExtraTreesModel:
    if n_trees < 1:
        raise ValidationError("n_trees must be >= 1")
    if len(train) == 0:
        raise ValidationError("training set is empty")
    x = train.values.astype(np.float32)
    d = x.shape[1]
    k = k_features or math.ceil(math.sqrt(d))
    rng = np.random.default_rng(seed)
    trees = tuple(_grow_tree(x, train.labels, train.n_classes, k, max(min_split, 2), rng)
                  for _ in range(n_trees))
    return ExtraTreesModel(trees, train.species, train.grid, train.kind)


def predict_trees(model: ExtraTreesModel, spectrum) -> Prediction:
    return model.predict(spectrum)
