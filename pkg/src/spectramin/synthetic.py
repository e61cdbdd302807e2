"""Synthetic spectral libraries used by tests, benchmarks and demo configs.

Spectra are sums of Gaussian bands on an irregular raw axis and go through
the normal preprocessing path (resample, scale to [0, 1]).
"""

from __future__ import annotations

import numpy as np

from .datasets import LabeledDataset, dataset_from_spectra
from .spectra import RAMAN_GRID, GridSpec, RawSpectrum, SpectrumKind, preprocess


def gaussian_bands(x: np.ndarray, centers, amplitudes, widths) -> np.ndarray:
    x = np.asarray(x, dtype=float)[:, None]
    c = np.asarray(centers, dtype=float)[None, :]
    a = np.asarray(amplitudes, dtype=float)[None, :]
    w = np.asarray(widths, dtype=float)[None, :]
    return np.sum(a * np.exp(-0.5 * ((x - c) / w) ** 2), axis=1)


def _raw_axis(rng: np.random.Generator, grid: GridSpec, n: int) -> np.ndarray:
    margin = 0.02 * (grid.end - grid.start)
    axis = np.sort(rng.uniform(grid.start - margin, grid.end + margin, n))
    # force strictly increasing positions
    return np.unique(axis)


def _templates(rng, n, grid, n_peaks, width_range):
    out = []
    lo = grid.start + 0.01 * (grid.end - grid.start)
    hi = grid.end - 0.01 * (grid.end - grid.start)
    for _ in range(n):
        k = int(rng.integers(n_peaks[0], n_peaks[1] + 1))
        out.append((
            rng.uniform(lo, hi, k),
            rng.uniform(0.2, 1.0, k),
            rng.uniform(*width_range, k),
        ))
    return out


def _render(rng, template, grid, kind, jitter, noise, baseline, n_raw):
    centers, amps, widths = template
    axis = _raw_axis(rng, grid, n_raw)
    c = centers + rng.uniform(-jitter, jitter, centers.size)
    a = amps * rng.uniform(0.8, 1.2, amps.size)
    y = gaussian_bands(axis, c, a, widths)
    y = y * (1.0 + rng.normal(0.0, noise, y.size)) + baseline * rng.random(y.size)
    return preprocess(RawSpectrum(axis, np.clip(y, 0.0, None), kind), grid)


def raman_library(n_classes: int = 20, per_class: int = 10, seed: int = 0,
                  grid: GridSpec = RAMAN_GRID, n_peaks: tuple[int, int] = (3, 6),
                  jitter: float = 3.0, noise: float = 0.05, baseline: float = 0.01,
                  width_range: tuple[float, float] = (4.0, 12.0),
                  kind: SpectrumKind = SpectrumKind.RAMAN, n_raw: int = 2400) -> LabeledDataset:
    """A library of ``n_classes`` band patterns with within-class jitter and noise."""
    rng = np.random.default_rng(seed)
    templates = _templates(rng, n_classes, grid, n_peaks, width_range)
    spectra, names = [], []
    for c, tpl in enumerate(templates):
        for _ in range(per_class):
            spectra.append(_render(rng, tpl, grid, kind, jitter, noise, baseline, n_raw))
            names.append(f"mineral-{c:03d}")
    return dataset_from_spectra(spectra, names)


def complementary_pair(n_classes: int = 20, per_class: int = 10, seed: int = 0,
                       grid_a: GridSpec = RAMAN_GRID,
                       grid_b: GridSpec | None = None,
                       noise: float = 0.05, jitter: float = 2.0,
                       n_raw: int = 2400) -> tuple[LabeledDataset, LabeledDataset]:
    """Two index-aligned modalities that are each only half informative.

    Modality A depends only on ``class // 2`` (which pair of classes), modality
    B only on ``class % 2`` (which member of the pair).  Sample ``i`` of A and
    sample ``i`` of B belong together.
    """
    from .spectra import VNIR_GRID

    if n_classes % 2:
        raise ValueError("n_classes must be even")
    grid_b = grid_b or VNIR_GRID
    rng = np.random.default_rng(seed)
    tpl_a = _templates(rng, n_classes // 2, grid_a, (3, 6), (4.0, 12.0))
    span_b = grid_b.end - grid_b.start
    tpl_b = _templates(rng, 2, grid_b, (3, 5), (0.01 * span_b, 0.03 * span_b))
    a_spectra, b_spectra, names = [], [], []
    for c in range(n_classes):
        for _ in range(per_class):
            a_spectra.append(_render(rng, tpl_a[c // 2], grid_a, SpectrumKind.RAMAN,
                                     jitter, noise, 0.01, n_raw))
            b_spectra.append(_render(rng, tpl_b[c % 2], grid_b, SpectrumKind.VNIR,
                                     jitter * span_b / 1000.0, noise, 0.01, n_raw))
            names.append(f"mineral-{c:03d}")
    return dataset_from_spectra(a_spectra, names), dataset_from_spectra(b_spectra, names)


def libs_mineral_library(minerals, lines, per_class: int = 5, seed: int = 0,
                         grid: GridSpec | None = None, sigma_nm: float = 0.2,
                         concentration: float = 200.0, noise: float = 0.03) -> LabeledDataset:
    """LIBS spectra of minerals whose composition wobbles around the formula.

    Each sample draws its element fractions from a Dirichlet centred on the
    mineral's formula composition (larger ``concentration`` means less wobble).
    """
    from .libs.synth import libs_intensity
    from .spectra import LIBS_GRID, Spectrum, normalize_unit

    grid = grid or LIBS_GRID
    rng = np.random.default_rng(seed)
    spectra, names = [], []
    for name, comp in minerals.items():
        elements = comp.elements
        frac = np.array([comp.get(e) for e in elements])
        profiles = np.stack([libs_intensity({e: 1.0}, lines, grid, sigma_nm) for e in elements])
        for _ in range(per_class):
            f = rng.dirichlet(concentration * frac) if len(elements) > 1 else frac
            y = (f @ profiles) * (1.0 + rng.normal(0.0, noise, grid.n_points))
            spectra.append(Spectrum(grid, normalize_unit(np.clip(y, 0.0, None)), SpectrumKind.LIBS))
            names.append(name)
    return dataset_from_spectra(spectra, names)
