"""Spectral value types and the Raman/VNIR preprocessing pipeline.

A raw trace is resampled onto a fixed grid by linear interpolation (zero
outside the measured range), then min-max scaled to [0, 1].  Training sets
are additionally cleaned per class by dropping spectra whose cosine distance
to the class mean exceeds a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyClass, InvalidSpectrum, ZeroVector


class SpectrumKind(str, Enum):
    RAMAN = "raman"
    VNIR = "vnir"
    LIBS = "libs"

    @classmethod
    def parse(cls, value: "SpectrumKind | str") -> "SpectrumKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise InvalidSpectrum(f"unknown spectrum kind {value!r}") from None


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridSpec:
    start: float
    end: float
    n_points: int

    def __post_init__(self) -> None:
        if not (np.isfinite(self.start) and np.isfinite(self.end)):
            raise InvalidSpectrum("grid bounds must be finite")
        if not self.start < self.end:
            raise InvalidSpectrum(f"grid start {self.start} must be < end {self.end}")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise InvalidSpectrum(f"grid needs >= 2 points, got {self.n_points}")
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def step(self) -> float:
        return (self.end - self.start) / (self.n_points - 1)

    def positions(self) -> np.ndarray:
        return np.linspace(self.start, self.end, self.n_points)

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "n_points": self.n_points}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GridSpec":
        return cls(float(d["start"]), float(d["end"]), int(d["n_points"]))


# Raman: 85-1800 cm^-1 in 1715 samples.  VNIR: 350-4000 nm, same length so the
# two streams of a fused network line up.  LIBS: 200-900 nm at 0.1 nm.
RAMAN_GRID = GridSpec(85.0, 1800.0, 1715)
VNIR_GRID = GridSpec(350.0, 4000.0, 1715)
LIBS_GRID = GridSpec(200.0, 900.0, 7001)

DEFAULT_GRIDS = {
    SpectrumKind.RAMAN: RAMAN_GRID,
    SpectrumKind.VNIR: VNIR_GRID,
    SpectrumKind.LIBS: LIBS_GRID,
}


@dataclass(frozen=True)
class RawSpectrum:
    """A measured trace on its native, strictly increasing axis."""

    positions: np.ndarray
    intensities: np.ndarray
    kind: SpectrumKind
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        pos = _frozen(self.positions)
        ints = _frozen(self.intensities)
        if pos.ndim != 1 or ints.ndim != 1:
            raise InvalidSpectrum("positions and intensities must be 1-D")
        if pos.shape != ints.shape:
            raise InvalidSpectrum(
                f"length mismatch: {pos.size} positions vs {ints.size} intensities"
            )
        if pos.size < 2:
            raise InvalidSpectrum("a spectrum needs at least 2 points")
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(ints)):
            raise InvalidSpectrum("positions and intensities must be finite")
        if np.any(np.diff(pos) <= 0):
            raise InvalidSpectrum("positions must be strictly increasing")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "intensities", ints)
        object.__setattr__(self, "kind", SpectrumKind.parse(self.kind))
        object.__setattr__(self, "meta", dict(self.meta))


@dataclass(frozen=True)
class Spectrum:
    """A preprocessed trace: values in [0, 1] on a fixed grid."""

    grid: GridSpec
    values: np.ndarray
    kind: SpectrumKind
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        vals = _frozen(self.values)
        if vals.shape != (self.grid.n_points,):
            raise InvalidSpectrum(
                f"expected {self.grid.n_points} values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)) or vals.min() < 0.0 or vals.max() > 1.0:
            raise InvalidSpectrum("spectrum values must lie in [0, 1]")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "kind", SpectrumKind.parse(self.kind))
        object.__setattr__(self, "meta", dict(self.meta))


def resample_linear(raw: RawSpectrum, grid: GridSpec) -> np.ndarray:
    """Linearly interpolate ``raw`` onto ``grid``; points outside its support are 0."""
    if raw.positions.size < 2:
        raise InvalidSpectrum("a spectrum needs at least 2 points")
    return np.interp(grid.positions(), raw.positions, raw.intensities, left=0.0, right=0.0)


def normalize_unit(values) -> np.ndarray:
    """Min-max scale to [0, 1].  A constant vector maps to all zeros."""
    v = np.asarray(values, dtype=float)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    out = (v - lo) / (hi - lo)
    # guard against rounding just outside the unit interval
    return np.clip(out, 0.0, 1.0)


def preprocess(raw: RawSpectrum, grid: GridSpec | None = None) -> Spectrum:
    grid = grid or DEFAULT_GRIDS[raw.kind]
    values = normalize_unit(resample_linear(raw, grid))
    return Spectrum(grid, values, raw.kind, raw.meta)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))


def cosine_distance(a, b) -> float:
    return 1.0 - cosine_similarity(a, b)


def _values(s) -> np.ndarray:
    return s.values if isinstance(s, Spectrum) else np.asarray(s, dtype=float)


def class_mean(spectra: Sequence[Spectrum]) -> np.ndarray:
    if len(spectra) == 0:
        raise EmptyClass("cannot average an empty class")
    grids = {s.grid for s in spectra if isinstance(s, Spectrum)}
    if len(grids) > 1:
        raise InvalidSpectrum("all spectra in a class must share one grid")
    return np.mean(np.stack([_values(s) for s in spectra]), axis=0)


def _safe_distance(v: np.ndarray, mean: np.ndarray) -> float:
    # a flat (all-zero) spectrum has no direction; treat it as maximally distant
    if not v.any() or not mean.any():
        return 1.0
    return cosine_distance(v, mean)


def outlier_distances(class_spectra: Sequence[Spectrum]) -> np.ndarray:
    mean = class_mean(class_spectra)
    return np.array([_safe_distance(_values(s), mean) for s in class_spectra])


def remove_outliers(class_spectra: Sequence[Spectrum], threshold: float = 0.5) -> list:
    """Keep spectra within ``threshold`` cosine distance of the class mean.

    The mean is computed once over the full input.  If every spectrum would be
    dropped, the one closest to the mean is kept so the class stays trainable.
    """
    dist = outlier_distances(class_spectra)
    kept = [s for s, d in zip(class_spectra, dist) if d <= threshold]
    if not kept:
        kept = [class_spectra[int(np.argmin(dist))]]
    return kept
