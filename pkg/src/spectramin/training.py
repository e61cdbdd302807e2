"""Build a trained classifier from a model name and a parameter mapping.

Shared by the command line and the experiment harness so that both accept the
same ``params`` JSON for each model family.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datasets import LabeledDataset, PairedSample, normalize_species
from .errors import NoPeaksError, ValidationError
from .learners.cnn import (
    ARCHITECTURES,
    TrainConfig,
    train_cnn,
    train_ensemble6,
    train_two_stream_cnn,
)
from .learners.knn import train_knn_weighted
from .learners.svm import train_linear_svm
from .learners.trees import train_extra_trees
from .libs.composition import ElementComposition, composition_cosine
from .libs.estimate import element_weight_vectors, estimate_composition_cosine, match_mineral_by_composition
from .libs.lines import LineTable, default_line_table, default_mineral_table, read_line_table, read_mineral_table
from .spectra import GridSpec, Spectrum, SpectrumKind

SINGLE_MODELS = ("knn", "trees", "svm", "cnn", "ensemble6")
LIBS_MODELS = ("libs-cosine",)

# defaults tuned on the synthetic benchmark; see README
CNN_DEFAULTS = {"epochs": 40, "batch_size": 16, "learning_rate": 1e-3,
                "ema_decay": 0.999, "ema_warmup": True}


def train_config(params: Mapping, seed: int) -> TrainConfig:
    merged = {**CNN_DEFAULTS, **{k: v for k, v in params.items() if k != "arch"}, "seed": seed}
    return TrainConfig.from_dict(merged)


def _check_keys(params: Mapping, allowed: Sequence[str], model: str) -> None:
    extra = set(params) - set(allowed)
    if extra:
        raise ValidationError(f"unknown parameter(s) for {model}: {sorted(extra)}")


def train_model(model: str, train: LabeledDataset, params: Mapping | None = None, seed: int = 0):
    """Train one single-modality classifier.  ``params`` are model specific."""
    params = dict(params or {})
    if model == "knn":
        _check_keys(params, ["k"], model)
        return train_knn_weighted(train, k=int(params.get("k", 5)))
    if model == "trees":
        _check_keys(params, ["n_trees", "k_features", "min_split"], model)
        return train_extra_trees(train, n_trees=int(params.get("n_trees", 100)),
                                 k_features=params.get("k_features"),
                                 min_split=int(params.get("min_split", 2)), seed=seed)
    if model == "svm":
        _check_keys(params, ["epochs", "lr", "reg"], model)
        return train_linear_svm(train, epochs=int(params.get("epochs", 200)),
                                lr=float(params.get("lr", 0.1)), reg=float(params.get("reg", 1e-3)))
    cnn_keys = ["arch", *TrainConfig.__dataclass_fields__]
    if model == "cnn":
        _check_keys(params, cnn_keys, model)
        name = params.get("arch", "simple")
        if name not in ARCHITECTURES:
            raise ValidationError(f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}")
        arch = ARCHITECTURES[name](train.n_classes, train.grid.n_points)
        return train_cnn(train, arch, train_config(params, seed))
    if model == "ensemble6":
        _check_keys(params, cnn_keys, model)
        return train_ensemble6(train, train_config(params, seed))
    raise ValidationError(f"unknown model {model!r}")


def train_two_stream(pairs: Sequence[PairedSample], classes: Sequence[str],
                     params: Mapping | None = None, seed: int = 0):
    params = dict(params or {})
    _check_keys(params, ["arch_a", "arch_b", *TrainConfig.__dataclass_fields__], "two-stream")
    first = pairs[0]
    archs = []
    for key, spectrum in (("arch_a", first.spectrum_a), ("arch_b", first.spectrum_b)):
        name = params.get(key, "simple")
        if name not in ARCHITECTURES:
            raise ValidationError(f"unknown architecture {name!r}")
        archs.append(ARCHITECTURES[name](len(classes), spectrum.grid.n_points))
    cfg = train_config({k: v for k, v in params.items() if k not in ("arch_a", "arch_b")}, seed)
    return train_two_stream_cnn(pairs, archs[0], archs[1], cfg, classes=classes)


@dataclass(frozen=True)
class CompositionMatcher:
    """LIBS classifier: estimate the element composition, then match minerals.

    Not trained; ``classes`` are the mineral names it can answer with.
    """

    lines: LineTable
    minerals: Mapping[str, ElementComposition]
    grid: GridSpec

    @property
    def classes(self) -> tuple:
        return tuple(self.minerals)

    def _vectors(self):
        # cached per instance; frozen dataclass so go through __dict__
        cache = self.__dict__.get("_vec")
        if cache is None:
            cache = element_weight_vectors(self.lines, self.grid)
            object.__setattr__(self, "_vec", cache)
        return cache

    def estimate(self, values: np.ndarray) -> ElementComposition | None:
        try:
            spectrum = Spectrum(self.grid, values, SpectrumKind.LIBS)
            comp, _ = estimate_composition_cosine(spectrum, self.lines, element_vectors=self._vectors())
        except NoPeaksError:
            return None
        return comp

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.empty((x.shape[0], len(self.minerals)))
        for i, row in enumerate(x):
            comp = self.estimate(row)
            if comp is None:
                out[i] = 1.0 / len(self.minerals)
            else:
                out[i] = match_mineral_by_composition(comp, self.minerals).scores
        return out

    def composition_similarity(self, values: np.ndarray, species: str) -> float:
        comp = self.estimate(values)
        if comp is None:
            return 0.0
        return composition_cosine(comp, self.minerals[species])


def composition_matcher(train: LabeledDataset, params: Mapping | None = None) -> CompositionMatcher:
    """Matcher restricted to the dataset's species, looked up by name in a mineral table."""
    params = dict(params or {})
    _check_keys(params, ["lines", "minerals"], "libs-cosine")
    lines = read_line_table(params["lines"]) if params.get("lines") else default_line_table()
    table = read_mineral_table(params["minerals"]) if params.get("minerals") else default_mineral_table()
    by_name = {normalize_species(k): v for k, v in table.items()}
    missing = [s for s in train.species if normalize_species(s) not in by_name]
    if missing:
        raise ValidationError(f"species missing from the mineral table: {missing[:5]}")
    minerals = {s: by_name[normalize_species(s)] for s in train.species}
    return CompositionMatcher(lines, minerals, train.grid)
