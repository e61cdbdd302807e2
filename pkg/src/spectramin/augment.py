"""Training-set augmentation.

Each technique appends exactly one synthetic copy per original sample, so
every class doubles in size.  Originals are kept unchanged and first.
Randomness is drawn per class from ``default_rng([seed, class_id])``, which
keeps results independent of class iteration order.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .datasets import LabeledDataset
from .errors import ValidationError

# magnitudes, small relative to [0, 1]-scaled spectra
DEFAULTS = {
    "shift": {"max_shift": 5},
    "offset": {"max_offset": 0.1},
    "noise": {"sigma": 0.05},
    "bjerrum": {"multiply": 0.1, "offset": 0.05, "slope": 0.05},
    "smote": {"k": 5},
}


def shift_values(values: np.ndarray, offset: int) -> np.ndarray:
    """``out[i] = values[i - offset]``; vacated bins are zero."""
    out = np.zeros_like(values)
    n = values.shape[-1]
    if offset >= n or offset <= -n:
        return out
    if offset > 0:
        out[..., offset:] = values[..., : n - offset]
    elif offset < 0:
        out[..., :offset] = values[..., -offset:]
    else:
        out[...] = values
    return out


def offset_values(values: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(values + delta, 0.0, 1.0)


def proportional_noise(values: np.ndarray, eps: np.ndarray) -> np.ndarray:
    return np.clip(values * (1.0 + eps), 0.0, 1.0)


def offset_slope_multiply(values: np.ndarray, m: float, a: float, b: float) -> np.ndarray:
    t = np.linspace(0.0, 1.0, values.shape[-1])
    return np.clip(m * values + a + b * t, 0.0, 1.0)


def _shift(x: np.ndarray, rng: np.random.Generator, max_shift: int = 5) -> np.ndarray:
    choices = np.concatenate([np.arange(-max_shift, 0), np.arange(1, max_shift + 1)])
    out = np.empty_like(x)
    for i, row in enumerate(x):
        out[i] = np.clip(shift_values(row, int(rng.choice(choices))), 0.0, 1.0)
    return out


def _offset(x: np.ndarray, rng: np.random.Generator, max_offset: float = 0.1) -> np.ndarray:
    deltas = rng.uniform(-max_offset, max_offset, size=(x.shape[0], 1))
    return offset_values(x, deltas)


def _noise(x: np.ndarray, rng: np.random.Generator, sigma: float = 0.05) -> np.ndarray:
    return proportional_noise(x, rng.normal(0.0, sigma, size=x.shape))


def _bjerrum(x: np.ndarray, rng: np.random.Generator, multiply: float = 0.1,
             offset: float = 0.05, slope: float = 0.05) -> np.ndarray:
    out = np.empty_like(x)
    for i, row in enumerate(x):
        m = rng.uniform(1.0 - multiply, 1.0 + multiply)
        a = rng.uniform(-offset, offset)
        b = rng.uniform(-slope, slope)
        out[i] = offset_slope_multiply(row, m, a, b)
    return out


def smote_points(x: np.ndarray, rng: np.random.Generator, k: int = 5) -> np.ndarray:
    """One synthetic point per row of ``x``, interpolated towards a near neighbour."""
    n = x.shape[0]
    k = min(k, n - 1)
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d2, np.inf)
    # stable sort so ties resolve by index
    neighbours = np.argsort(d2, axis=1, kind="stable")[:, :k]
    out = np.empty_like(x)
    for i in range(n):
        z = x[neighbours[i, rng.integers(k)]]
        lam = rng.uniform(0.0, 1.0)
        out[i] = x[i] + lam * (z - x[i])
    return out


def _smote(x: np.ndarray, rng: np.random.Generator, k: int = 5) -> np.ndarray:
    if x.shape[0] < 2:
        # a single exemplar has no neighbour to interpolate towards
        return _offset(x, rng)
    return np.clip(smote_points(x, rng, k), 0.0, 1.0)


TECHNIQUES: dict[str, Callable[..., np.ndarray]] = {
    "shift": _shift,
    "offset": _offset,
    "noise": _noise,
    "bjerrum": _bjerrum,
    "smote": _smote,
}


def augment(train: LabeledDataset, technique: str, seed: int, **params) -> LabeledDataset:
    """Return ``train`` plus one augmented copy of every sample."""
    if technique in (None, "none"):
        return train
    if technique not in TECHNIQUES:
        raise ValidationError(f"unknown augmentation {technique!r}; choose from {sorted(TECHNIQUES)}")
    fn = TECHNIQUES[technique]
    opts = {**DEFAULTS[technique], **params}
    new_values = [train.values]
    new_labels = [train.labels]
    new_meta = list(train.meta)
    for c, idx in sorted(train.indices_by_species().items()):
        if idx.size == 0:
            continue
        rng = np.random.default_rng([seed, c])
        new_values.append(fn(train.values[idx], rng, **opts))
        new_labels.append(np.full(idx.size, c))
        new_meta.extend({**train.meta[i], "augmented": technique} for i in idx)
    return train.with_samples(np.concatenate(new_values), np.concatenate(new_labels), tuple(new_meta))


def augment_shift(train: LabeledDataset, seed: int, **params) -> LabeledDataset:
    return augment(train, "shift", seed, **params)


def augment_offset(train: LabeledDataset, seed: int, **params) -> LabeledDataset:
    return augment(train, "offset", seed, **params)


def augment_proportional_noise(train: LabeledDataset, seed: int, **params) -> LabeledDataset:
    return augment(train, "noise", seed, **params)


def augment_offset_slope_multiply(train: LabeledDataset, seed: int, **params) -> LabeledDataset:
    return augment(train, "bjerrum", seed, **params)


def augment_smote(train: LabeledDataset, seed: int, **params) -> LabeledDataset:
    return augment(train, "smote", seed, **params)
