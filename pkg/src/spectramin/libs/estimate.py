"""Composition estimation by peak matching, and mineral matching by composition.

Both the query spectrum and every element are represented as sparse vectors
over fixed-width wavelength bins: the query holds its detected peak heights,
an element holds its tabulated line intensities (unit L2 norm).  The cosine
similarity between the two ranks the elements, like term weights in text
retrieval.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..errors import NoPeaksError, ZeroVector
from ..learners.prediction import Prediction
from ..spectra import GridSpec, Spectrum
from .composition import ElementComposition, composition_cosine, union_elements
from .lines import LineTable
from .peaks import detect_peaks

DEFAULT_BIN_NM = 0.3
SIMILARITY_FLOOR = 0.01

SparseVector = dict  # bin index -> weight


def wavelength_bin(wavelength, grid: GridSpec, bin_width: float = DEFAULT_BIN_NM):
    return np.floor((np.asarray(wavelength, dtype=float) - grid.start) / bin_width).astype(np.int64)


def _accumulate(bins: np.ndarray, weights: np.ndarray) -> SparseVector:
    vec: SparseVector = {}
    for b, w in zip(bins.tolist(), weights.tolist()):
        vec[b] = vec.get(b, 0.0) + w
    return vec


def _l2(vec: SparseVector) -> float:
    return float(np.sqrt(sum(v * v for v in vec.values())))


def sparse_cosine(a: SparseVector, b: SparseVector) -> float:
    na, nb = _l2(a), _l2(b)
    if na == 0 or nb == 0:
        raise ZeroVector("sparse vector is zero")
    small, large = (a, b) if len(a) <= len(b) else (b, a)
    return sum(v * large.get(k, 0.0) for k, v in small.items()) / (na * nb)


def element_weight_vectors(lines: LineTable, grid: GridSpec,
                           bin_width: float = DEFAULT_BIN_NM) -> dict[str, SparseVector]:
    """Unit-norm sparse line-intensity vector per element with lines inside ``grid``."""
    out = {}
    for sym in lines.elements:
        wl, inten = lines.lines_for(sym)
        inside = (wl >= grid.start) & (wl <= grid.end) & (inten > 0)
        if not inside.any():
            continue
        vec = _accumulate(wavelength_bin(wl[inside], grid, bin_width), inten[inside])
        norm = _l2(vec)
        out[sym] = {k: v / norm for k, v in vec.items()}
    return out


def query_vector(spectrum: Spectrum, bin_width: float = DEFAULT_BIN_NM,
                 min_height: float = 0.01, min_prominence: float = 0.005) -> SparseVector:
    peaks = detect_peaks(spectrum, min_height, min_prominence)
    if len(peaks) == 0:
        raise NoPeaksError("no peaks detected in the query spectrum")
    return _accumulate(wavelength_bin(peaks.wavelengths, spectrum.grid, bin_width), peaks.heights)


def estimate_composition_cosine(spectrum: Spectrum, lines: LineTable,
                                bin_width: float = DEFAULT_BIN_NM,
                                floor: float = SIMILARITY_FLOOR,
                                min_height: float = 0.01,
                                min_prominence: float = 0.005,
                                element_vectors: Mapping[str, SparseVector] | None = None,
                                ) -> tuple[ElementComposition, dict[str, float]]:
    """Per-element cosine similarities, floored and L1-normalized into fractions.

    Returns ``(composition, similarities)``; ``similarities`` covers every
    element of the table that has lines on the spectrum's grid.
    """
    q = query_vector(spectrum, bin_width, min_height, min_prominence)
    vectors = element_vectors if element_vectors is not None else \
        element_weight_vectors(lines, spectrum.grid, bin_width)
    sims = {sym: max(0.0, sparse_cosine(q, vec)) for sym, vec in vectors.items()}
    kept = {sym: s for sym, s in sims.items() if s >= floor}
    if not kept:
        raise NoPeaksError("no element matches the detected peaks")
    return ElementComposition.from_amounts(kept), sims


def match_mineral_by_composition(est: ElementComposition | Mapping[str, float],
                                 minerals: Mapping[str, ElementComposition]) -> Prediction:
    """Score minerals by cosine similarity of compositions, L1-normalized.

    If ``est`` shares no element with any mineral, the result is uniform.
    """
    if not minerals:
        raise ValueError("mineral table is empty")
    if not isinstance(est, ElementComposition):
        if not any(v > 0 for v in est.values()):
            raise ZeroVector("estimated composition is all zero")
        est = ElementComposition.from_amounts(est)
    names = list(minerals)
    sims = np.array([composition_cosine(est, minerals[n]) for n in names])
    sims = np.clip(sims, 0.0, None)
    if sims.sum() <= 0:
        return Prediction.uniform(names)
    return Prediction(sims / sims.sum(), tuple(names))


def composition_matrix(minerals: Mapping[str, ElementComposition]) -> tuple[list[str], np.ndarray]:
    elements = union_elements(*minerals.values())
    return elements, np.stack([minerals[n].vector(elements) for n in minerals])
