"""Local-maximum peak detection with topographic prominence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..spectra import GridSpec, Spectrum


@dataclass(frozen=True)
class PeakList:
    indices: np.ndarray
    wavelengths: np.ndarray
    heights: np.ndarray
    prominences: np.ndarray
    params: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.indices.size)


def local_maxima(y: np.ndarray) -> np.ndarray:
    """Indices of points higher than both neighbours; flat tops report their centre."""
    peaks = []
    i = 1
    n = y.size
    while i < n - 1:
        if y[i - 1] < y[i]:
            j = i
            while j + 1 < n - 1 and y[j + 1] == y[i]:
                j += 1
            if y[j + 1] < y[j]:
                peaks.append((i + j) // 2)
                i = j
        i += 1
    return np.array(peaks, dtype=np.int64)


def prominences(y: np.ndarray, peaks: np.ndarray) -> np.ndarray:
    """Height above the higher of the two lowest points reachable before higher ground."""
    out = np.empty(peaks.size)
    for k, p in enumerate(peaks):
        h = y[p]
        left_min = h
        j = p
        while j >= 0 and y[j] <= h:
            left_min = min(left_min, y[j])
            j -= 1
        right_min = h
        j = p
        while j < y.size and y[j] <= h:
            right_min = min(right_min, y[j])
            j += 1
        out[k] = h - max(left_min, right_min)
    return out


def _refine(y: np.ndarray, i: int) -> float:
    """Sub-sample offset of a maximum from a parabola through three points."""
    if i <= 0 or i >= y.size - 1:
        return 0.0
    a, b, c = y[i - 1], y[i], y[i + 1]
    denom = a - 2 * b + c
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))


def detect_peaks(spectrum: Spectrum | np.ndarray, min_height: float = 0.01,
                 min_prominence: float = 0.005, grid: GridSpec | None = None) -> PeakList:
    if isinstance(spectrum, Spectrum):
        y, grid = spectrum.values, spectrum.grid
    else:
        y = np.asarray(spectrum, dtype=float)
    positions = grid.positions() if grid is not None else np.arange(y.size, dtype=float)
    step = positions[1] - positions[0] if y.size > 1 else 1.0
    cand = local_maxima(y)
    prom = prominences(y, cand)
    keep = (y[cand] >= min_height) & (prom >= min_prominence)
    idx = cand[keep]
    wl = np.array([positions[i] + _refine(y, i) * step for i in idx])
    return PeakList(idx, wl, y[idx].copy(), prom[keep],
                    {"min_height": min_height, "min_prominence": min_prominence})
