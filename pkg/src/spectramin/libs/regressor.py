"""CNN that regresses element fractions from LIBS spectra.

Trained only on synthetic spectra: each sample mixes a random subset of one
to six elements with Dirichlet(1) fractions.  The softmax head makes every
output a valid composition; the loss is mean absolute error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ArchError, ValidationError
from ..learners.base import TrainedModel, param_arrays, read_params, register
from ..learners.cnn import TrainConfig, fit_network, forward_proba
from ..learners.nn import CnnArchitecture, Conv, Dense, MaxPool, Network, softmax_mae_loss
from ..spectra import LIBS_GRID, GridSpec, Spectrum, SpectrumKind, normalize_unit
from .composition import ElementComposition
from .lines import LineTable
from .synth import DEFAULT_SIGMA_NM, libs_intensity


def libs_regressor_arch(n_elements: int, input_length: int = LIBS_GRID.n_points) -> CnnArchitecture:
    if input_length >= 2000:
        layers = [Conv(8, 11, stride=2), MaxPool(4), Conv(16, 7), MaxPool(4),
                  Conv(32, 5), MaxPool(2), Dense(128)]
    else:
        layers = [Conv(8, 7), MaxPool(2), Conv(16, 5), MaxPool(2), Dense(64)]
    arch = CnnArchitecture(tuple(layers) + (Dense(n_elements, "softmax"),), input_length,
                           name="libs-regressor")
    arch.check()
    return arch


def random_compositions(elements, n_samples: int, rng: np.random.Generator,
                        max_elements: int = 6) -> np.ndarray:
    """``(n_samples, len(elements))`` fraction matrix; rows sum to one."""
    k_max = min(max_elements, len(elements))
    out = np.zeros((n_samples, len(elements)))
    for i in range(n_samples):
        k = int(rng.integers(1, k_max + 1))
        pick = rng.choice(len(elements), size=k, replace=False)
        out[i, pick] = rng.dirichlet(np.ones(k))
    return out


def synthetic_libs_dataset(lines: LineTable, grid: GridSpec, n_samples: int, seed: int,
                           sigma_nm: float = DEFAULT_SIGMA_NM, max_elements: int = 6,
                           elements=None) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    elements = tuple(elements) if elements is not None else lines.elements
    rng = np.random.default_rng(seed)
    y = random_compositions(elements, n_samples, rng, max_elements)
    # each element's profile once; mixtures are linear combinations
    profiles = np.stack([libs_intensity({e: 1.0}, lines, grid, sigma_nm) for e in elements])
    x = np.stack([normalize_unit(row @ profiles) for row in y])
    return x, y, elements


@register
@dataclass(frozen=True)
class LibsCnnModel(TrainedModel):
    """``classes`` are element symbols; ``predict_proba`` rows are fractions."""

    model_type = "libs_cnn"

    arch: CnnArchitecture
    params: tuple
    classes: tuple
    grid: GridSpec | None = None
    kind: SpectrumKind | None = SpectrumKind.LIBS

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x))
        if x.shape[1] != self.arch.input_length:
            raise ArchError(f"input length {x.shape[1]} != {self.arch.input_length}")
        return forward_proba(Network.single(self.arch), list(self.params), [x])

    def composition(self, spectrum: Spectrum | np.ndarray) -> ElementComposition:
        x = spectrum.values if isinstance(spectrum, Spectrum) else np.asarray(spectrum)
        p = self.predict_proba(x[None, :])[0]
        return ElementComposition.from_amounts(dict(zip(self.classes, p)))

    def state(self):
        meta = {**self._contract(), "arch": self.arch.to_dict(), "n_params": len(self.params)}
        return meta, param_arrays(self.params, "w")

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(CnnArchitecture.from_dict(meta["arch"]),
                   tuple(read_params(arrays, "w", int(meta["n_params"]))),
                   **cls._read_contract(meta))


def train_libs_cnn(lines: LineTable, grid: GridSpec = LIBS_GRID, n_samples: int = 2000,
                   cfg: TrainConfig | None = None, sigma_nm: float = DEFAULT_SIGMA_NM,
                   arch: CnnArchitecture | None = None, elements=None,
                   max_elements: int = 6) -> LibsCnnModel:
    cfg = cfg or TrainConfig(epochs=20, batch_size=32)
    if n_samples < 1:
        raise ValidationError("n_samples must be positive")
    x, y, elements = synthetic_libs_dataset(lines, grid, n_samples, cfg.seed, sigma_nm,
                                            max_elements, elements)
    arch = arch or libs_regressor_arch(len(elements), grid.n_points)
    if arch.n_classes != len(elements) or arch.input_length != grid.n_points:
        raise ArchError("regressor architecture does not match elements/grid")
    fit = fit_network(Network.single(arch), [x], y, cfg, loss_fn=softmax_mae_loss)
    return LibsCnnModel(arch, tuple(fit.params), elements, grid, SpectrumKind.LIBS)


def predict_libs_cnn(model: LibsCnnModel, spectrum) -> ElementComposition:
    return model.composition(spectrum)
